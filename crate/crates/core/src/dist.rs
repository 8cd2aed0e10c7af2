//! Categorical distributions over a fixed vocabulary.
//!
//! A [`Dist`] is an immutable, normalized probability vector indexed by token
//! id. All information quantities are in nats.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sums within this distance of 1 are accepted as-is.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Sums within this distance of 1 are silently renormalized; anything worse is rejected.
pub const RENORM_TOLERANCE: f64 = 1e-6;

/// Ordered table of unique token strings. Ids are positions in the table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::default();
        for tok in tokens {
            let tok = tok.into();
            if vocab.ids.contains_key(&tok) {
                return Err(Error::DuplicateToken(tok));
            }
            vocab.intern(&tok);
        }
        if vocab.is_empty() {
            return Err(Error::EmptyVocab);
        }
        Ok(vocab)
    }

    /// Vocabulary of `size` synthetic tokens named `w0`, `w1`, ...
    pub fn synthetic(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("w{i}")))
    }

    /// Returns the id of `token`, appending it if it is new.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.ids.insert(token.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps whitespace-separated words to ids, failing on the first unknown word.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::UnknownToken(w.to_owned())))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A normalized probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Dist {
    probs: Vec<f64>,
}

impl Dist {
    /// Builds a distribution from probabilities that already sum to one.
    ///
    /// Inputs off by at most [`RENORM_TOLERANCE`] are renormalized; larger
    /// deviations, negative or non-finite entries are rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = validate_weights(&probs)?;
        if (sum - 1.0).abs() > RENORM_TOLERANCE {
            return Err(Error::InvalidDist(format!("probabilities sum to {sum}")));
        }
        if (sum - 1.0).abs() > NORM_TOLERANCE {
            return Ok(Self::normalized(probs, sum));
        }
        Ok(Dist { probs })
    }

    /// Normalizes arbitrary non-negative weights with a positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum = validate_weights(&weights)?;
        if sum <= 0.0 {
            return Err(Error::InvalidDist("weights sum to zero".into()));
        }
        Ok(Self::normalized(weights, sum))
    }

    fn normalized(mut probs: Vec<f64>, sum: f64) -> Self {
        probs.iter_mut().for_each(|p| *p /= sum);
        Dist { probs }
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::EmptyVocab);
        }
        Ok(Dist {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn one_hot(size: usize, id: u32) -> Result<Self> {
        if id as usize >= size {
            return Err(Error::param(format!("id {id} out of range for size {size}")));
        }
        let mut probs = vec![0.0; size];
        probs[id as usize] = 1.0;
        Ok(Dist { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: u32) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    /// Most probable id; the lowest id wins ties.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as u32
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax() as usize]
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

fn validate_weights(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::EmptyVocab);
    }
    let mut sum = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidDist(format!("entry {i} is {w}")));
        }
        sum += w;
    }
    Ok(sum)
}

fn check_sizes(p: &Dist, q: &Dist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(d: &Dist) -> f64 {
    let h: f64 = d.probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    // `+ 0.0` turns a negative zero into a positive one.
    h.max(0.0) + 0.0
}

/// `KL(p || q)` over the support of `p`; infinite when `q` misses part of it.
pub fn kl_divergence(p: &Dist, q: &Dist) -> Result<f64> {
    check_sizes(p, q)?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Total variation distance, `(1/2) Σ |p - q|`.
pub fn total_variation(p: &Dist, q: &Dist) -> Result<f64> {
    check_sizes(p, q)?;
    let l1: f64 = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * l1)
}

/// Supplies the next-token distribution for a prefix of token ids.
pub trait Scorer {
    fn next_dist(&self, prefix: &[u32]) -> Result<Dist>;
}

impl<F> Scorer for F
where
    F: Fn(&[u32]) -> Result<Dist>,
{
    fn next_dist(&self, prefix: &[u32]) -> Result<Dist> {
        self(prefix)
    }
}

/// Mean of `-ln P(x_i | x_<i)` over `ids`.
pub fn avg_neg_log_prob<S: Scorer + ?Sized>(ids: &[u32], scorer: &S) -> Result<f64> {
    avg_neg_log_prob_after(&[], ids, scorer)
}

/// Like [`avg_neg_log_prob`], but each prediction also conditions on `prefix`,
/// which itself is not scored.
pub fn avg_neg_log_prob_after<S: Scorer + ?Sized>(prefix: &[u32], ids: &[u32], scorer: &S) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::param("cannot score an empty sequence"));
    }
    let mut history = Vec::with_capacity(prefix.len() + ids.len());
    history.extend_from_slice(prefix);
    let mut total = 0.0;
    for &id in ids {
        let d = scorer.next_dist(&history)?;
        if id as usize >= d.len() {
            return Err(Error::SizeMismatch {
                expected: d.len(),
                actual: id as usize + 1,
            });
        }
        let p = d.prob(id);
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        total -= p.ln();
        history.push(id);
    }
    Ok(total / ids.len() as f64)
}

/// Seeded random stream. Child streams for parallel work are derived from
/// `(seed, index)` so results do not depend on scheduling.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream number `index` under `seed`. Stream 0 is reserved
    /// for [`Rng::new`].
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index.wrapping_add(1));
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Inverse-CDF draw over ids in stored order.
pub fn sample(d: &Dist, rng: &mut Rng) -> u32 {
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in d.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        cum += p;
        if u < cum {
            return i as u32;
        }
    }
    // Rounding left the cumulative sum just under u.
    last as u32
}
