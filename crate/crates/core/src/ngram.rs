//! Count-based n-gram language model with optional uniform smoothing.
//!
//! Contexts are the `order - 1` ids preceding a word, left-padded with
//! [`BOS`] at the start of the corpus. Only observed contexts are stored.
//! When smoothing is on, an unseen context yields the pure uniform
//! distribution; when it is off, an unseen context is an error.

use std::cmp::Ordering;

use serde::Serialize;

use crate::dist::{entropy, sample, Dist, Rng, Scorer, Vocab};
use crate::error::{Error, Result};
use crate::truncation::TruncationRule;

/// Begin-of-text padding id. Never part of the vocabulary or a prediction.
pub const BOS: u32 = u32::MAX;

/// A context and its `(next word, count)` pairs.
pub type RawContext = (Vec<u32>, Vec<(u32, u32)>);

/// Splits UTF-8 text on whitespace and interns each word in order of first
/// appearance.
pub fn tokenize(text: &str) -> (Vocab, Vec<u32>) {
    let mut vocab = Vocab::default();
    let ids = text.split_whitespace().map(|w| vocab.intern(w)).collect();
    (vocab, ids)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    uniform_weight: f64,
    /// `order - 1` ids per context, contexts in ascending lexicographic order.
    contexts: Vec<u32>,
    num_contexts: usize,
    /// Context `i` owns `next_ids[offsets[i]..offsets[i + 1]]`, ascending.
    offsets: Vec<usize>,
    next_ids: Vec<u32>,
    counts: Vec<u32>,
    totals: Vec<u64>,
}

/// One stored context and its continuation counts.
#[derive(Clone, Copy, Debug)]
pub struct ContextEntry<'a> {
    pub context: &'a [u32],
    pub next_ids: &'a [u32],
    pub counts: &'a [u32],
    pub total: u64,
}

impl NGramModel {
    /// Counts every `order`-gram of `tokens`, with `order - 1` [`BOS`] pads in front.
    pub fn train(vocab: Vocab, tokens: &[u32], order: usize, uniform_weight: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::param("order must be at least 1"));
        }
        check_weight(uniform_weight)?;
        if tokens.len() < order {
            return Err(Error::CorpusTooShort {
                len: tokens.len(),
                order,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab.len()) {
            return Err(Error::param(format!(
                "token id {bad} outside vocabulary of {}",
                vocab.len()
            )));
        }

        let ctx_len = order - 1;
        let mut padded = vec![BOS; ctx_len];
        padded.extend_from_slice(tokens);
        let mut starts: Vec<usize> = (0..tokens.len()).collect();
        starts.sort_unstable_by(|&a, &b| padded[a..a + order].cmp(&padded[b..b + order]));

        let mut grams = starts.iter().map(|&s| &padded[s..s + order]).peekable();
        let mut entries: Vec<RawContext> = Vec::new();
        while let Some(gram) = grams.next() {
            let mut count = 1u32;
            while grams.peek() == Some(&gram) {
                grams.next();
                count += 1;
            }
            let (ctx, word) = gram.split_at(ctx_len);
            match entries.last_mut() {
                Some((last, next)) if last.as_slice() == ctx => next.push((word[0], count)),
                _ => entries.push((ctx.to_vec(), vec![(word[0], count)])),
            }
        }
        Self::from_entries(order, vocab, uniform_weight, entries)
    }

    /// Builds a model from explicit per-context counts, as read back from disk.
    pub fn from_entries(order: usize, vocab: Vocab, uniform_weight: f64, mut entries: Vec<RawContext>) -> Result<Self> {
        if order == 0 {
            return Err(Error::param("order must be at least 1"));
        }
        check_weight(uniform_weight)?;
        let ctx_len = order - 1;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut model = NGramModel {
            order,
            vocab,
            uniform_weight,
            contexts: Vec::with_capacity(entries.len() * ctx_len),
            num_contexts: entries.len(),
            offsets: vec![0],
            next_ids: Vec::new(),
            counts: Vec::new(),
            totals: Vec::with_capacity(entries.len()),
        };
        let v = model.vocab.len() as u32;
        for (i, (ctx, mut next)) in entries.into_iter().enumerate() {
            if ctx.len() != ctx_len {
                return Err(Error::param(format!(
                    "context {i} has {} ids, expected {ctx_len}",
                    ctx.len()
                )));
            }
            if ctx.iter().any(|&t| t != BOS && t >= v) {
                return Err(Error::param(format!("context {i} holds an id outside the vocabulary")));
            }
            if i > 0 && model.context(i - 1) == ctx.as_slice() {
                return Err(Error::param(format!("context {i} is duplicated")));
            }
            next.sort_unstable_by_key(|&(id, _)| id);
            if next.is_empty() || next.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::param(format!(
                    "context {i} has empty or duplicated continuations"
                )));
            }
            let mut total = 0u64;
            for (id, c) in next {
                if id >= v || c == 0 {
                    return Err(Error::param(format!("context {i} has invalid entry ({id}, {c})")));
                }
                model.next_ids.push(id);
                model.counts.push(c);
                total += c as u64;
            }
            model.contexts.extend_from_slice(&ctx);
            model.offsets.push(model.next_ids.len());
            model.totals.push(total);
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn uniform_weight(&self) -> f64 {
        self.uniform_weight
    }

    /// Same counts, different smoothing weight.
    pub fn with_uniform_weight(mut self, uniform_weight: f64) -> Result<Self> {
        check_weight(uniform_weight)?;
        self.uniform_weight = uniform_weight;
        Ok(self)
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    fn context(&self, i: usize) -> &[u32] {
        let n = self.order - 1;
        &self.contexts[i * n..(i + 1) * n]
    }

    fn find(&self, context: &[u32]) -> Option<usize> {
        if context.len() != self.order - 1 {
            return None;
        }
        let (mut lo, mut hi) = (0, self.num_contexts);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.context(mid).cmp(context) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    fn entry(&self, i: usize) -> ContextEntry<'_> {
        let range = self.offsets[i]..self.offsets[i + 1];
        ContextEntry {
            context: self.context(i),
            next_ids: &self.next_ids[range.clone()],
            counts: &self.counts[range],
            total: self.totals[i],
        }
    }

    /// Stored contexts in ascending order.
    pub fn entries(&self) -> impl Iterator<Item = ContextEntry<'_>> + '_ {
        (0..self.num_contexts).map(|i| self.entry(i))
    }

    pub fn is_seen(&self, context: &[u32]) -> bool {
        self.find(context).is_some()
    }

    pub fn count(&self, context: &[u32], word: u32) -> u64 {
        self.find(context)
            .map(|i| {
                let e = self.entry(i);
                e.next_ids.binary_search(&word).map_or(0, |j| e.counts[j] as u64)
            })
            .unwrap_or(0)
    }

    pub fn context_total(&self, context: &[u32]) -> Option<u64> {
        self.find(context).map(|i| self.totals[i])
    }

    /// The `order - 1` ids that condition the word after `history`, padded
    /// with [`BOS`] when the history is short.
    pub fn context_of(&self, history: &[u32]) -> Vec<u32> {
        let n = self.order - 1;
        let take = history.len().min(n);
        let mut ctx = vec![BOS; n - take];
        ctx.extend_from_slice(&history[history.len() - take..]);
        ctx
    }

    /// Next-word distribution for an `order - 1` id context.
    pub fn cond_dist(&self, context: &[u32]) -> Result<Dist> {
        if context.len() != self.order - 1 {
            return Err(Error::SizeMismatch {
                expected: self.order - 1,
                actual: context.len(),
            });
        }
        let v = self.vocab.len();
        let w = self.uniform_weight;
        match self.find(context) {
            Some(i) => Ok(self.dist_for_entry(self.entry(i))),
            None if w > 0.0 => Dist::uniform(v),
            None => Err(Error::UnseenContext(context.to_vec())),
        }
    }

    fn dist_for_entry(&self, e: ContextEntry<'_>) -> Dist {
        let v = self.vocab.len();
        let w = self.uniform_weight;
        let mut probs = vec![w / v as f64; v];
        let scale = (1.0 - w) / e.total as f64;
        for (&id, &c) in e.next_ids.iter().zip(e.counts) {
            probs[id as usize] += scale * c as f64;
        }
        Dist::new(probs).expect("mixture of normalized distributions")
    }

    /// Conditional distributions of every stored context, in context order.
    pub fn seen_dists(&self) -> impl Iterator<Item = Dist> + '_ {
        self.entries().map(|e| self.dist_for_entry(e))
    }

    /// Conditional distribution of stored context `index`.
    pub fn seen_dist(&self, index: usize) -> Option<Dist> {
        (index < self.num_contexts).then(|| self.dist_for_entry(self.entry(index)))
    }
}

impl Scorer for NGramModel {
    fn next_dist(&self, prefix: &[u32]) -> Result<Dist> {
        self.cond_dist(&self.context_of(prefix))
    }
}

fn check_weight(w: f64) -> Result<()> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::param(format!("uniform weight {w} outside [0, 1)")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GenerationStatus {
    Completed,
    /// Stopped early: an unsmoothed model reached a context it never saw.
    UnseenContext,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub prompt_ids: Vec<u32>,
    pub generated_ids: Vec<u32>,
    /// First step whose sampled word leaves the model in an unseen context.
    pub support_exit_index: Option<usize>,
    /// Entropy of the distribution actually sampled from, per step.
    pub per_step_entropy: Vec<f64>,
    /// Whether the context conditioning each step was seen in training.
    pub per_step_seen: Vec<bool>,
    pub status: GenerationStatus,
}

/// Samples `steps` words after `prompt_ids`, truncating each step with `rule`.
pub fn generate(
    model: &NGramModel,
    prompt_ids: &[u32],
    steps: usize,
    rule: Option<&TruncationRule>,
    rng: &mut Rng,
) -> Result<GenerationRecord> {
    if steps == 0 {
        return Err(Error::param("steps must be at least 1"));
    }
    let mut history = prompt_ids.to_vec();
    let mut record = GenerationRecord {
        prompt_ids: prompt_ids.to_vec(),
        generated_ids: Vec::with_capacity(steps),
        support_exit_index: None,
        per_step_entropy: Vec::with_capacity(steps),
        per_step_seen: Vec::with_capacity(steps),
        status: GenerationStatus::Completed,
    };
    let mut context = model.context_of(&history);
    for step in 0..steps {
        let seen = model.is_seen(&context);
        let dist = match model.cond_dist(&context) {
            Ok(d) => d,
            Err(Error::UnseenContext(_)) => {
                record.status = GenerationStatus::UnseenContext;
                break;
            }
            Err(e) => return Err(e),
        };
        let dist = match rule {
            Some(r) => r.apply(&dist)?.1,
            None => dist,
        };
        let word = sample(&dist, rng);
        record.per_step_entropy.push(entropy(&dist));
        record.per_step_seen.push(seen);
        record.generated_ids.push(word);
        history.push(word);
        context = model.context_of(&history);
        if record.support_exit_index.is_none() && !model.is_seen(&context) {
            record.support_exit_index = Some(step);
        }
    }
    Ok(record)
}
