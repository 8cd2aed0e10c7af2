//! Fixtures shared by the integration tests: random distributions, a
//! brute-force reference for every truncation rule, and synthetic corpora.

#![allow(dead_code)]

use desmooth::{Dist, Rng, TruncationRule, Vocab};
use rand::seq::SliceRandom;
use rand::Rng as _;

/// Random distribution over 2..=64 words. Mixes flat, peaked, tied and
/// partially zero shapes.
pub fn random_dist(rng: &mut Rng) -> Dist {
    let v = rng.gen_range(2..=64usize);
    random_dist_of(v, rng)
}

pub fn random_dist_of(v: usize, rng: &mut Rng) -> Dist {
    let mut w: Vec<f64> = match rng.gen_range(0..4) {
        0 => (0..v).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect(),
        1 => {
            let k = rng.gen_range(1.0..12.0);
            (0..v).map(|_| rng.gen::<f64>().powf(k)).collect()
        }
        2 => (0..v).map(|_| rng.gen_range(1..=3) as f64).collect(),
        _ => (0..v)
            .map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen::<f64>() })
            .collect(),
    };
    if w.iter().all(|&x| x <= 0.0) {
        let i = rng.gen_range(0..v);
        w[i] = 1.0;
    }
    Dist::from_weights(w).unwrap()
}

/// One rule of every kind with random parameters valid for `d`.
pub fn random_rules(d: &Dist, rng: &mut Rng) -> Vec<TruncationRule> {
    let log_uniform = |rng: &mut Rng, lo: f64, hi: f64| (rng.gen_range(lo.ln()..hi.ln())).exp();
    vec![
        TruncationRule::top_k(rng.gen_range(1..=d.len())).unwrap(),
        TruncationRule::top_p(rng.gen_range(0.05..=1.0)).unwrap(),
        TruncationRule::typical(rng.gen_range(0.05..=1.0)).unwrap(),
        TruncationRule::epsilon(log_uniform(rng, 1e-4, 0.5)).unwrap(),
        TruncationRule::eta(log_uniform(rng, 1e-4, 0.5)).unwrap(),
    ]
}

/// Reference implementations, written directly from the rule definitions.
pub mod oracle {
    use desmooth::{Alpha, Dist, TruncationRule};

    fn h(p: &[f64]) -> f64 {
        let mut s = 0.0;
        for &x in p {
            if x > 0.0 {
                s -= x * x.ln();
            }
        }
        s.max(0.0)
    }

    fn argmax(p: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        best
    }

    /// Walks `ranked` until the taken mass reaches `target`.
    fn cover(p: &[f64], ranked: &[usize], target: f64) -> Vec<bool> {
        let mut keep = vec![false; p.len()];
        let mut mass = 0.0;
        for &i in ranked.iter().filter(|&&i| p[i] > 0.0) {
            keep[i] = true;
            mass += p[i];
            if mass >= target - 1e-12 {
                break;
            }
        }
        keep
    }

    fn ranked_by<F: Fn(usize) -> f64>(n: usize, key: F) -> Vec<usize> {
        // Insertion sort keeps equal keys in id order.
        let mut out: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            let k = key(i);
            let pos = out.iter().position(|&j| key(j) > k).unwrap_or(out.len());
            out.insert(pos, i);
        }
        out
    }

    fn above(p: &[f64], t: f64) -> Vec<bool> {
        let mut keep: Vec<bool> = p.iter().map(|&x| x > t).collect();
        if !keep.contains(&true) {
            keep[argmax(p)] = true;
        }
        keep
    }

    pub fn allowed(d: &Dist, rule: &TruncationRule) -> Vec<bool> {
        let p = d.probs();
        let n = p.len();
        match *rule {
            TruncationRule::TopK { k } => {
                let ranked = ranked_by(n, |i| -p[i]);
                let mut keep = vec![false; n];
                for &i in &ranked[..k] {
                    keep[i] = true;
                }
                keep
            }
            TruncationRule::TopP { p: target } => cover(p, &ranked_by(n, |i| -p[i]), target),
            TruncationRule::Typical { p: target } => {
                let ent = h(p);
                let key = |i: usize| {
                    if p[i] > 0.0 {
                        (ent + p[i].ln()).abs()
                    } else {
                        f64::INFINITY
                    }
                };
                cover(p, &ranked_by(n, key), target)
            }
            TruncationRule::Epsilon { epsilon } => above(p, epsilon),
            TruncationRule::Eta { epsilon, alpha } => {
                let a = match alpha {
                    Alpha::Auto => epsilon.sqrt(),
                    Alpha::Fixed(a) => a,
                };
                above(p, epsilon.min(a * (-h(p)).exp()))
            }
        }
    }
}

/// Builds a word sampler from `(word, weight)` pairs.
struct Table {
    words: Vec<u32>,
    cum: Vec<f64>,
}

impl Table {
    fn new(pairs: &[(u32, f64)]) -> Self {
        let mut cum = Vec::with_capacity(pairs.len());
        let mut s = 0.0;
        for &(_, w) in pairs {
            s += w;
            cum.push(s);
        }
        for c in &mut cum {
            *c /= s;
        }
        Table {
            words: pairs.iter().map(|&(w, _)| w).collect(),
            cum,
        }
    }

    fn draw(&self, rng: &mut Rng) -> u32 {
        let u: f64 = rng.gen();
        let i = self.cum.partition_point(|&c| c <= u).min(self.words.len() - 1);
        self.words[i]
    }
}

fn zipf_tail(rng: &mut Rng, pool: &[u32], len: usize, mass: f64, exclude: &[u32]) -> Vec<(u32, f64)> {
    let mut picks: Vec<u32> = Vec::with_capacity(len);
    while picks.len() < len {
        let w = *pool.choose(rng).unwrap();
        if !exclude.contains(&w) && !picks.contains(&w) {
            picks.push(w);
        }
    }
    let norm: f64 = (1..=len).map(|r| 1.0 / r as f64).sum();
    picks
        .into_iter()
        .enumerate()
        .map(|(r, w)| (w, mass / (r + 1) as f64 / norm))
        .collect()
}

/// Markov-chain corpus with contexts of very different entropy.
///
/// Word 0 (`<hub>`) continues near-uniformly over 1,500 words; "sharp" words
/// put 0.97 on one successor; "mixed" words have a softer head, a route back
/// to the hub and a longer tail. The first `wrap` tokens are repeated at the
/// end so every context seen in training has a seen successor context.
pub struct MarkovCorpus {
    pub vocab: Vocab,
    pub ids: Vec<u32>,
}

pub const MARKOV_WORDS: usize = 2000;

pub fn markov_corpus(tokens: usize, wrap: usize, seed: u64) -> MarkovCorpus {
    let mut rng = Rng::new(seed);
    let n = MARKOV_WORDS as u32;
    let hub = 0u32;
    let regular: Vec<u32> = (1..=n).collect();
    let mut perm = regular.clone();
    perm.shuffle(&mut rng);

    let mut tables: Vec<Table> = Vec::with_capacity(n as usize + 1);
    let hub_targets: Vec<(u32, f64)> = regular.choose_multiple(&mut rng, 1500).map(|&w| (w, 1.0)).collect();
    tables.push(Table::new(&hub_targets));
    for (i, &w) in regular.iter().enumerate() {
        let head = perm[i];
        let mut pairs = if w <= n / 2 {
            let mut t = vec![(head, 0.97)];
            t.extend(zipf_tail(&mut rng, &regular, 20, 0.03, &[head]));
            t
        } else {
            let hp = rng.gen_range(0.4..0.7);
            let mut t = vec![(head, hp), (hub, 0.2)];
            t.extend(zipf_tail(&mut rng, &regular, 50, 0.8 - hp, &[head]));
            t
        };
        pairs.retain(|&(_, p)| p > 0.0);
        tables.push(Table::new(&pairs));
    }

    let mut ids = Vec::with_capacity(tokens + wrap);
    let mut cur = regular[0];
    for _ in 0..tokens {
        ids.push(cur);
        cur = tables[cur as usize].draw(&mut rng);
    }
    let head: Vec<u32> = ids[..wrap].to_vec();
    ids.extend(head);

    let mut names = vec!["<hub>".to_string()];
    names.extend(regular.iter().map(|w| format!("m{w}")));
    MarkovCorpus {
        vocab: Vocab::new(names).unwrap(),
        ids,
    }
}

/// Word pools for the repetition corpus.
pub const POOL: usize = 20;
pub const DIVERSE: usize = 16;

/// Blocks of `a b c` repeated 13 times, one of 16 "diverse" words, then 200
/// draws from a 20-word pool. After `b c` the model continues with `a` with
/// probability 12/13 and with each diverse word about 1/208.
pub fn repetition_corpus(blocks: usize, seed: u64) -> (Vocab, Vec<u32>) {
    let mut rng = Rng::new(seed);
    let mut names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    names.extend((0..DIVERSE).map(|i| format!("d{i}")));
    names.extend((0..POOL).map(|i| format!("p{i}")));
    let vocab = Vocab::new(names).unwrap();
    let pool0 = (3 + DIVERSE) as u32;
    let mut ids = Vec::new();
    for _ in 0..blocks {
        for _ in 0..13 {
            ids.extend([0, 1, 2]);
        }
        ids.push(3 + rng.gen_range(0..DIVERSE as u32));
        for _ in 0..200 {
            ids.push(pool0 + rng.gen_range(0..POOL as u32));
        }
    }
    (vocab, ids)
}

pub fn pool_id(i: usize) -> u32 {
    (3 + DIVERSE + i) as u32
}
