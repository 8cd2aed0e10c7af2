//! Truncation behaviour as a function of the pre-truncation entropy.

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{entropy, total_variation, Dist};
use crate::error::{Error, Result};
use crate::truncation::TruncationRule;

/// Default bucket edges: 0.25-nat steps over `[0, 8]`.
pub fn default_bucket_edges() -> Vec<f64> {
    (0..=32).map(|i| i as f64 * 0.25).collect()
}

/// Order-independent accumulator: each value is rounded to a multiple of
/// 2^-80 and summed as an integer, so any grouping of the same inputs
/// produces the same bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct FixedSum(i128);

const FIXED_SCALE: f64 = (1u128 << 80) as f64;

impl FixedSum {
    fn add(&mut self, x: f64) {
        self.0 += (x * FIXED_SCALE).round() as i128;
    }

    fn merge(&mut self, other: FixedSum) {
        self.0 += other.0;
    }

    fn mean(self, count: u64) -> f64 {
        self.0 as f64 / FIXED_SCALE / count as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Accum {
    count: u64,
    tv: FixedSum,
    retained: FixedSum,
}

impl Accum {
    fn add(&mut self, tv: f64, retained: f64) {
        self.count += 1;
        self.tv.add(tv);
        self.retained.add(retained);
    }

    fn merge(&mut self, other: &Accum) {
        self.count += other.count;
        self.tv.merge(other.tv);
        self.retained.merge(other.retained);
    }

    fn means(&self) -> (Option<f64>, Option<f64>) {
        if self.count == 0 {
            return (None, None);
        }
        (Some(self.tv.mean(self.count)), Some(self.retained.mean(self.count)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyBucketStats {
    pub bucket_lo: f64,
    pub bucket_hi: f64,
    pub count: u64,
    /// Mean total variation between the model and truncated distributions.
    pub mean_tv: Option<f64>,
    /// Mean entropy after truncation.
    pub mean_retained_entropy: Option<f64>,
}

/// Distributions whose entropy fell outside every bucket.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverflowStats {
    pub count: u64,
    pub mean_tv: Option<f64>,
    pub mean_retained_entropy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileReport {
    pub rule: TruncationRule,
    pub buckets: Vec<EntropyBucketStats>,
    pub overflow: OverflowStats,
}

impl ProfileReport {
    pub fn total_count(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum::<u64>() + self.overflow.count
    }

    pub fn lowest_occupied(&self) -> Option<&EntropyBucketStats> {
        self.buckets.iter().find(|b| b.count > 0)
    }

    pub fn highest_occupied(&self) -> Option<&EntropyBucketStats> {
        self.buckets.iter().rev().find(|b| b.count > 0)
    }
}

/// Streaming accumulator behind [`entropy_profile`]. Shards built with the
/// same rule and edges can be merged in any order.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyProfile {
    rule: TruncationRule,
    edges: Vec<f64>,
    buckets: Vec<Accum>,
    overflow: Accum,
}

impl EntropyProfile {
    pub fn new(rule: TruncationRule, edges: Vec<f64>) -> Result<Self> {
        rule.validate()?;
        if edges.len() < 2 {
            return Err(Error::param("need at least two bucket edges"));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("bucket edges must be finite and strictly ascending"));
        }
        let n = edges.len() - 1;
        Ok(EntropyProfile {
            rule,
            edges,
            buckets: vec![Accum::default(); n],
            overflow: Accum::default(),
        })
    }

    fn bucket_of(&self, h: f64) -> Option<usize> {
        if h < self.edges[0] || h >= self.edges[self.edges.len() - 1] {
            return None;
        }
        // Index of the last edge <= h.
        Some(self.edges.partition_point(|&e| e <= h) - 1)
    }

    pub fn push(&mut self, d: &Dist) -> Result<()> {
        let h = entropy(d);
        let (_, truncated) = self.rule.apply(d)?;
        let tv = total_variation(d, &truncated)?;
        let retained = entropy(&truncated);
        match self.bucket_of(h) {
            Some(i) => self.buckets[i].add(tv, retained),
            None => self.overflow.add(tv, retained),
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EntropyProfile) -> Result<()> {
        if self.rule != other.rule || self.edges != other.edges {
            return Err(Error::param("cannot merge profiles with different rules or edges"));
        }
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            a.merge(b);
        }
        self.overflow.merge(&other.overflow);
        Ok(())
    }

    pub fn report(&self) -> ProfileReport {
        let buckets = self
            .buckets
            .iter()
            .enumerate()
            .map(|(i, acc)| {
                let (mean_tv, mean_retained_entropy) = acc.means();
                EntropyBucketStats {
                    bucket_lo: self.edges[i],
                    bucket_hi: self.edges[i + 1],
                    count: acc.count,
                    mean_tv,
                    mean_retained_entropy,
                }
            })
            .collect();
        let (mean_tv, mean_retained_entropy) = self.overflow.means();
        ProfileReport {
            rule: self.rule,
            buckets,
            overflow: OverflowStats {
                count: self.overflow.count,
                mean_tv,
                mean_retained_entropy,
            },
        }
    }
}

/// Buckets each distribution by its entropy and averages, per bucket, the
/// total variation introduced by `rule` and the entropy left after it.
pub fn entropy_profile<I>(dists: I, rule: &TruncationRule, edges: &[f64]) -> Result<ProfileReport>
where
    I: IntoIterator<Item = Dist>,
{
    let mut profile = EntropyProfile::new(*rule, edges.to_vec())?;
    for d in dists {
        profile.push(&d)?;
    }
    Ok(profile.report())
}

/// Parallel [`entropy_profile`]; bit-identical to the sequential result.
pub fn entropy_profile_par(dists: &[Dist], rule: &TruncationRule, edges: &[f64]) -> Result<ProfileReport> {
    let empty = EntropyProfile::new(*rule, edges.to_vec())?;
    let merged = dists
        .par_iter()
        .try_fold(
            || empty.clone(),
            |mut acc, d| {
                acc.push(d)?;
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || empty.clone(),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )?;
    Ok(merged.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn donald() -> Dist {
        let mut p = vec![0.96];
        p.extend(std::iter::repeat_n(0.001, 40));
        Dist::new(p).unwrap()
    }

    #[test]
    fn one_hot_stream_lands_in_lowest_bucket() {
        let dists = (0..5).map(|i| Dist::one_hot(5, i).unwrap());
        let rule = TruncationRule::top_p(0.9).unwrap();
        let r = entropy_profile(dists, &rule, &default_bucket_edges()).unwrap();
        let first = &r.buckets[0];
        assert_eq!(first.count, 5);
        assert_eq!(first.mean_tv, Some(0.0));
        assert_eq!(first.mean_retained_entropy, Some(0.0));
        assert_eq!(r.total_count(), 5);
    }

    #[test]
    fn donald_case_top_p_versus_eta() {
        let edges = default_bucket_edges();
        let top_p = entropy_profile([donald()], &TruncationRule::top_p(0.95).unwrap(), &edges).unwrap();
        let b = top_p.lowest_occupied().unwrap();
        assert!((b.mean_tv.unwrap() - 0.04).abs() < 1e-12);
        let eta = entropy_profile([donald()], &TruncationRule::eta(0.0009).unwrap(), &edges).unwrap();
        assert!(eta.lowest_occupied().unwrap().mean_tv.unwrap().abs() < 1e-12);
        assert_eq!(b.bucket_lo, 0.25);
    }

    #[test]
    fn uniform_high_entropy_epsilon_versus_eta() {
        let edges: Vec<f64> = (0..=48).map(|i| i as f64 * 0.25).collect();
        let u = Dist::uniform(50_000).unwrap();
        let eps = entropy_profile([u.clone()], &TruncationRule::epsilon(0.0009).unwrap(), &edges).unwrap();
        assert_eq!(eps.highest_occupied().unwrap().mean_retained_entropy, Some(0.0));
        let eta = entropy_profile([u], &TruncationRule::eta(0.0009).unwrap(), &edges).unwrap();
        let h = eta.highest_occupied().unwrap().mean_retained_entropy.unwrap();
        assert!((h - 50_000f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_entropy_goes_to_overflow() {
        let rule = TruncationRule::top_k(1).unwrap();
        let r = entropy_profile([Dist::uniform(100).unwrap()], &rule, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.overflow.count, 1);
        assert!(r.buckets.iter().all(|b| b.count == 0 && b.mean_tv.is_none()));
        assert_eq!(r.total_count(), 1);
    }

    #[test]
    fn edges_are_validated() {
        let rule = TruncationRule::top_k(1).unwrap();
        assert!(EntropyProfile::new(rule, vec![0.0]).is_err());
        assert!(EntropyProfile::new(rule, vec![0.0, 0.0, 1.0]).is_err());
        assert!(EntropyProfile::new(rule, vec![1.0, 0.5]).is_err());
        let mut a = EntropyProfile::new(rule, vec![0.0, 1.0]).unwrap();
        let b = EntropyProfile::new(rule, vec![0.0, 2.0]).unwrap();
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn bucket_boundaries_are_half_open() {
        let p = EntropyProfile::new(TruncationRule::top_k(1).unwrap(), vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(p.bucket_of(0.0), Some(0));
        assert_eq!(p.bucket_of(1.0), Some(1));
        assert_eq!(p.bucket_of(1.999), Some(1));
        assert_eq!(p.bucket_of(2.0), None);
        assert_eq!(p.bucket_of(-0.1), None);
    }
}
