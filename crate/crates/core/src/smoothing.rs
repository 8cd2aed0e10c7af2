//! Ground-truth smoothing experiments.
//!
//! A [`SmoothingScenario`] fixes a true distribution `P*`, a near-uniform
//! smoothing distribution `Q` and a mixture weight `lambda`; the model
//! distribution is `lambda * P* + (1 - lambda) * Q`. Because `P*` is known,
//! the support lost or leaked by any allowed set can be measured exactly.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{entropy, Dist, Rng};
use crate::error::{Error, Result};
use crate::truncation::AllowedSet;

/// Probabilities at or below this are treated as outside the support.
pub const SUPPORT_FLOOR: f64 = 1e-12;

/// Slack for the scenario invariants, which are checked in floating point.
const INVARIANT_SLACK: f64 = 1e-12;

/// Ids with probability above [`SUPPORT_FLOOR`].
pub fn support(d: &Dist) -> Vec<bool> {
    d.probs().iter().map(|&p| p > SUPPORT_FLOOR).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingScenario {
    p_star: Dist,
    q: Dist,
    lambda: f64,
    delta: f64,
    alpha: f64,
    lambda_bar: f64,
}

impl SmoothingScenario {
    /// Validates and builds a scenario.
    ///
    /// `q` must lie in the band `[(1 - delta)/V, (1 + delta)/V]` and `lambda`
    /// must be at least [`SmoothingScenario::lambda_lower_bound`].
    pub fn new(p_star: Dist, q: Dist, lambda: f64, delta: f64, alpha: f64, lambda_bar: f64) -> Result<Self> {
        if p_star.len() != q.len() {
            return Err(Error::SizeMismatch {
                expected: p_star.len(),
                actual: q.len(),
            });
        }
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if !(lambda > 0.0 && lambda <= 1.0) {
            return bad(format!("lambda = {lambda} outside (0, 1]"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return bad(format!("delta = {delta} must be a finite non-negative number"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return bad(format!("alpha = {alpha} outside (0, 1]"));
        }
        if !(lambda_bar > 0.0 && lambda_bar <= 1.0) {
            return bad(format!("lambda_bar = {lambda_bar} outside (0, 1]"));
        }
        let s = SmoothingScenario {
            p_star,
            q,
            lambda,
            delta,
            alpha,
            lambda_bar,
        };
        let v = s.vocab_size() as f64;
        let (lo, hi) = ((1.0 - delta) / v, (1.0 + delta) / v);
        if let Some((i, &qx)) =
            s.q.probs()
                .iter()
                .enumerate()
                .find(|(_, &qx)| qx < lo - INVARIANT_SLACK || qx > hi + INVARIANT_SLACK)
        {
            return bad(format!("q[{i}] = {qx} outside the delta band [{lo}, {hi}]"));
        }
        let floor = s.lambda_lower_bound();
        if lambda < floor - INVARIANT_SLACK {
            return bad(format!("lambda = {lambda} below its lower bound {floor}"));
        }
        Ok(s)
    }

    pub fn p_star(&self) -> &Dist {
        &self.p_star
    }

    pub fn q(&self) -> &Dist {
        &self.q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The prefix-independent floor on `lambda`.
    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    pub fn vocab_size(&self) -> usize {
        self.p_star.len()
    }

    /// Entropy of `P*`.
    pub fn true_entropy(&self) -> f64 {
        entropy(&self.p_star)
    }

    /// Entropy-dependent floor `1 - V * alpha * exp(-h*) / (1 + delta)`.
    pub fn context_lambda_floor(&self) -> f64 {
        let v = self.vocab_size() as f64;
        1.0 - v * self.alpha * (-self.true_entropy()).exp() / (1.0 + self.delta)
    }

    pub fn lambda_lower_bound(&self) -> f64 {
        self.lambda_bar.max(self.context_lambda_floor())
    }

    pub fn support(&self) -> Vec<bool> {
        support(&self.p_star)
    }

    pub fn support_size(&self) -> usize {
        self.support().iter().filter(|&&s| s).count()
    }
}

/// Weights of the two terms of the support-weighted total variation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TvsWeights {
    pub beta_var: f64,
    pub beta_sup: f64,
}

impl TvsWeights {
    pub fn new(beta_var: f64, beta_sup: f64) -> Result<Self> {
        let ok = |b: f64| b >= 0.0 && b.is_finite();
        if !ok(beta_var) || !ok(beta_sup) || (beta_var == 0.0 && beta_sup == 0.0) {
            return Err(Error::param(format!(
                "weights ({beta_var}, {beta_sup}) must be non-negative and not both zero"
            )));
        }
        Ok(TvsWeights { beta_var, beta_sup })
    }
}

impl Default for TvsWeights {
    fn default() -> Self {
        TvsWeights {
            beta_var: 1.0,
            beta_sup: 1.0,
        }
    }
}

/// The model distribution `lambda * P* + (1 - lambda) * Q`.
pub fn smooth(s: &SmoothingScenario) -> Result<Dist> {
    let l = s.lambda;
    let probs = s
        .p_star
        .probs()
        .iter()
        .zip(s.q.probs())
        .map(|(&p, &q)| l * p + (1.0 - l) * q)
        .collect();
    Dist::new(probs)
}

/// Largest probability smoothing alone can give a word: `(1 + delta)(1 - lambda_bar) / V`.
pub fn bound_absolute(s: &SmoothingScenario) -> f64 {
    (1.0 + s.delta) * (1.0 - s.lambda_bar) / s.vocab_size() as f64
}

/// Entropy-relative bound `alpha * exp(-h*)`.
pub fn bound_relative(s: &SmoothingScenario) -> f64 {
    s.alpha * (-s.true_entropy()).exp()
}

/// The ideal threshold: the smaller of the two bounds.
pub fn eta_star(s: &SmoothingScenario) -> f64 {
    bound_absolute(s).min(bound_relative(s))
}

/// Support-weighted total variation between `P*` and a truncated model.
///
/// `beta_var` weighs true mass that was cut, `beta_sup` weighs truncated-model
/// mass kept outside the true support.
pub fn tv_s(p_star: &Dist, p_trunc: &Dist, a: &AllowedSet, w: TvsWeights) -> Result<f64> {
    for len in [p_trunc.len(), a.mask().len()] {
        if len != p_star.len() {
            return Err(Error::SizeMismatch {
                expected: p_star.len(),
                actual: len,
            });
        }
    }
    let mut lost = 0.0;
    let mut leaked = 0.0;
    for ((&ps, &pt), &allowed) in p_star.probs().iter().zip(p_trunc.probs()).zip(a.mask()) {
        let in_support = ps > SUPPORT_FLOOR;
        match (in_support, allowed) {
            (true, false) => lost += ps,
            (false, true) => leaked += pt,
            _ => {}
        }
    }
    Ok(w.beta_var * lost + w.beta_sup * leaked)
}

/// Ranges from which [`sample_scenario`] draws the free constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioRanges {
    pub delta: (f64, f64),
    /// Sampled log-uniformly.
    pub alpha: (f64, f64),
    pub lambda_bar: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        ScenarioRanges {
            delta: (0.0, 0.5),
            alpha: (0.005, 1.0),
            lambda_bar: (0.5, 0.95),
        }
    }
}

/// Mixed into `P*` so no support word falls below [`SUPPORT_FLOOR`].
const SUPPORT_MIX: f64 = 1e-6;

pub fn sample_scenario(
    vocab_size: usize,
    support_size: usize,
    entropy_target: f64,
    rng: &mut Rng,
) -> Result<SmoothingScenario> {
    sample_scenario_in(vocab_size, support_size, entropy_target, ScenarioRanges::default(), rng)
}

/// Random scenario with `P*` supported on exactly `support_size` words and
/// entropy within 0.1 nats of `entropy_target`.
pub fn sample_scenario_in(
    vocab_size: usize,
    support_size: usize,
    entropy_target: f64,
    ranges: ScenarioRanges,
    rng: &mut Rng,
) -> Result<SmoothingScenario> {
    if support_size == 0 || support_size > vocab_size {
        return Err(Error::InfeasibleScenario(format!(
            "support size {support_size} outside 1..={vocab_size}"
        )));
    }
    let max_h = (support_size as f64).ln();
    if !(entropy_target >= 0.0 && entropy_target <= max_h + 1e-9) {
        return Err(Error::InfeasibleScenario(format!(
            "entropy {entropy_target} outside [0, ln {support_size} = {max_h}]"
        )));
    }

    let ids = index::sample(rng, vocab_size, support_size).into_vec();
    let scores: Vec<f64> = (0..support_size).map(|_| rng.gen::<f64>()).collect();
    let weights = tempered_weights(&scores, entropy_target);
    let mut p = vec![0.0; vocab_size];
    for (&id, &w) in ids.iter().zip(&weights) {
        p[id] = w;
    }
    let p_star = Dist::new(p)?;
    let h = entropy(&p_star);
    if (h - entropy_target).abs() > 0.1 {
        return Err(Error::InfeasibleScenario(format!(
            "reached entropy {h}, wanted {entropy_target}"
        )));
    }

    let delta = rng.gen_range(ranges.delta.0..=ranges.delta.1);
    let alpha = (rng.gen_range(ranges.alpha.0.ln()..=ranges.alpha.1.ln()))
        .exp()
        .min(1.0);
    let lambda_bar = rng.gen_range(ranges.lambda_bar.0..=ranges.lambda_bar.1);

    // Centering offsets drawn from (-1/2, 1/2) keeps each q strictly inside the band.
    let offsets: Vec<f64> = (0..vocab_size).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mean = offsets.iter().sum::<f64>() / vocab_size as f64;
    let v = vocab_size as f64;
    let q = Dist::new(offsets.iter().map(|u| (1.0 + delta * (u - mean)) / v).collect())?;

    let floor = lambda_bar.max(1.0 - v * alpha * (-h).exp() / (1.0 + delta));
    let lambda = if floor >= 1.0 { 1.0 } else { rng.gen_range(floor..=1.0) };
    SmoothingScenario::new(p_star, q, lambda, delta, alpha, lambda_bar)
}

/// Softmax of `beta * scores` mixed with a small uniform floor, with `beta`
/// found by bisection so the entropy hits `target`.
fn tempered_weights(scores: &[f64], target: f64) -> Vec<f64> {
    let k = scores.len();
    let weights = |beta: f64| -> Vec<f64> {
        let top = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (beta * (s - top)).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter()
            .map(|x| (1.0 - SUPPORT_MIX) * x / z + SUPPORT_MIX / k as f64)
            .collect()
    };
    let h = |w: &[f64]| -> f64 { w.iter().map(|&p| -p * p.ln()).sum() };
    if k == 1 || target >= (k as f64).ln() {
        return weights(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while h(&weights(hi)) > target && hi < 1e6 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if h(&weights(mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    weights(0.5 * (lo + hi))
}

/// Scenario `index` of a seeded batch: support size uniform over
/// `1..=vocab_size`, entropy target uniform over `[0, ln support]`.
pub fn batch_scenario(vocab_size: usize, seed: u64, index: u64) -> Result<SmoothingScenario> {
    let mut rng = Rng::derive(seed, index);
    let support_size = rng.gen_range(1..=vocab_size);
    let target = rng.gen::<f64>() * (support_size as f64).ln();
    sample_scenario(vocab_size, support_size, target, &mut rng)
}

/// Outcome of thresholding a scenario's smoothed distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub threshold: f64,
    pub eta_star: f64,
    pub allowed_size: usize,
    pub support_size: usize,
    /// True mass cut by the threshold (the `beta_var` term, unweighted).
    pub variation_loss: f64,
    /// Truncated-model mass outside the true support (the `beta_sup` term, unweighted).
    pub support_loss: f64,
    pub support_loss_zero: bool,
    /// No threshold at or above `eta_star` cuts less true mass.
    pub minimal: bool,
}

/// Checks the `eta_star` threshold on `s`.
pub fn verify_recovery(s: &SmoothingScenario) -> Result<RecoveryReport> {
    verify_threshold(s, eta_star(s))
}

/// Checks an arbitrary probability threshold against the ideal one.
///
/// Thresholds at or above `eta_star` are exactly those that keep no
/// out-of-support word for every scenario in the model class. `minimal` asks
/// whether any of them, found by enumerating every distinct model probability
/// and the midpoints between them, cuts strictly less true mass than
/// `threshold` does.
pub fn verify_threshold(s: &SmoothingScenario, threshold: f64) -> Result<RecoveryReport> {
    let model = smooth(s)?;
    let sup = s.support();
    let star = eta_star(s);
    let probs = model.probs();

    let mask: Vec<bool> = probs.iter().map(|&p| p > threshold).collect();
    let allowed_size = mask.iter().filter(|&&m| m).count();
    let support_loss = if allowed_size == 0 {
        0.0
    } else {
        let set = AllowedSet::from_mask(&model, mask.clone())?;
        let trunc = crate::truncation::truncate(&model, &set)?;
        tv_s(s.p_star(), &trunc, &set, TvsWeights::new(0.0, 1.0)?)?
    };
    let leaks = mask.iter().zip(&sup).any(|(&m, &in_s)| m && !in_s);

    let cut_mass = |t: f64| -> f64 {
        probs
            .iter()
            .zip(s.p_star.probs())
            .zip(&sup)
            .filter(|((&pm, _), &in_s)| in_s && pm <= t)
            .map(|((_, &ps), _)| ps)
            .fold(0.0, |acc, p| acc + p)
    };
    let variation_loss = cut_mass(threshold);

    let mut levels: Vec<f64> = probs.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut candidates = vec![star];
    candidates.extend(levels.iter().copied());
    candidates.extend(levels.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let best_safe = candidates
        .into_iter()
        .filter(|&t| t >= star)
        .map(cut_mass)
        .fold(f64::INFINITY, f64::min);

    Ok(RecoveryReport {
        threshold,
        eta_star: star,
        allowed_size,
        support_size: sup.iter().filter(|&&x| x).count(),
        variation_loss,
        support_loss,
        support_loss_zero: !leaks,
        minimal: variation_loss <= best_safe,
    })
}

/// Generates and verifies `count` seeded scenarios in parallel. Results are
/// ordered by scenario index and do not depend on the thread count.
pub fn verify_batch(count: usize, vocab_size: usize, seed: u64) -> Result<Vec<(SmoothingScenario, RecoveryReport)>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let s = batch_scenario(vocab_size, seed, i)?;
            let report = verify_recovery(&s)?;
            Ok((s, report))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(p: &[f64]) -> Dist {
        Dist::new(p.to_vec()).unwrap()
    }

    fn uniform(v: usize) -> Dist {
        Dist::uniform(v).unwrap()
    }

    #[test]
    fn smooth_examples() {
        let p = d(&[0.7, 0.2, 0.1, 0.0]);
        let s = SmoothingScenario::new(p.clone(), uniform(4), 1.0, 0.0, 0.5, 0.8).unwrap();
        assert_eq!(smooth(&s).unwrap(), p);

        let s = SmoothingScenario::new(d(&[1.0, 0.0]), uniform(2), 0.9, 0.0, 0.5, 0.8).unwrap();
        let m = smooth(&s).unwrap();
        assert!((m.probs()[0] - 0.95).abs() < 1e-12 && (m.probs()[1] - 0.05).abs() < 1e-12);

        let s = SmoothingScenario::new(uniform(5), uniform(5), 0.85, 0.1, 0.5, 0.8).unwrap();
        assert!(smooth(&s).unwrap().probs().iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn scenario_invariants_are_enforced() {
        // q outside the band.
        assert!(SmoothingScenario::new(d(&[1.0, 0.0]), d(&[0.9, 0.1]), 0.9, 0.1, 0.5, 0.8).is_err());
        // lambda below lambda_bar.
        assert!(SmoothingScenario::new(d(&[1.0, 0.0]), uniform(2), 0.7, 0.0, 0.5, 0.8).is_err());
        // lambda below the entropy floor: V=10, alpha=0.01, h=0 gives 1 - 0.1 = 0.9.
        let hot = Dist::one_hot(10, 0).unwrap();
        assert!(SmoothingScenario::new(hot.clone(), uniform(10), 0.85, 0.0, 0.01, 0.8).is_err());
        assert!(SmoothingScenario::new(hot, uniform(10), 0.9, 0.0, 0.01, 0.8).is_ok());
        assert!(SmoothingScenario::new(d(&[1.0]), uniform(2), 0.9, 0.0, 0.5, 0.8).is_err());
        assert!(SmoothingScenario::new(uniform(2), uniform(2), 0.0, 0.0, 0.5, 0.8).is_err());
    }

    #[test]
    fn bound_examples() {
        let s = SmoothingScenario::new(uniform(10), uniform(10), 0.9, 0.0, 0.5, 0.8).unwrap();
        assert!((bound_absolute(&s) - 0.02).abs() < 1e-15);
        // Uniform P* on all ten words: relative bound alpha / V.
        assert!((bound_relative(&s) - 0.05).abs() < 1e-15);
        assert!((eta_star(&s) - 0.02).abs() < 1e-15);

        let s = SmoothingScenario::new(uniform(10), uniform(10), 1.0, 0.0, 0.5, 1.0).unwrap();
        assert_eq!(bound_absolute(&s), 0.0);
        assert_eq!(eta_star(&s), 0.0);

        let big = SmoothingScenario::new(uniform(50_000), uniform(50_000), 0.9, 0.5, 0.5, 0.8).unwrap();
        assert!((bound_absolute(&big) - 6e-6).abs() < 1e-18);

        let hot = Dist::one_hot(10, 3).unwrap();
        let s = SmoothingScenario::new(hot.clone(), uniform(10), 0.95, 0.0, 0.03, 0.8).unwrap();
        assert!((bound_relative(&s) - 0.03).abs() < 1e-15);
        let s = SmoothingScenario::new(hot, uniform(10), 0.95, 0.0, 0.01, 0.8).unwrap();
        assert!((eta_star(&s) - 0.01).abs() < 1e-15);

        let p = d(&[0.4, 0.3, 0.2, 0.1]);
        let s = SmoothingScenario::new(p, uniform(4), 1.0, 0.0, 0.03, 0.8).unwrap();
        assert!((bound_relative(&s) - 0.008342335021895455).abs() < 1e-12);
    }

    #[test]
    fn tv_s_examples() {
        let p_star = d(&[0.9, 0.1, 0.0]);
        let model = d(&[0.85, 0.1, 0.05]);
        let exact = AllowedSet::from_mask(&model, vec![true, true, false]).unwrap();
        let t = crate::truncation::truncate(&model, &exact).unwrap();
        assert_eq!(
            tv_s(&p_star, &t, &exact, TvsWeights::new(3.0, 7.0).unwrap()).unwrap(),
            0.0
        );

        let only0 = AllowedSet::from_mask(&model, vec![true, false, false]).unwrap();
        let t = crate::truncation::truncate(&model, &only0).unwrap();
        let v = tv_s(&p_star, &t, &only0, TvsWeights::default()).unwrap();
        assert!((v - 0.1).abs() < 1e-12);

        let p_star = d(&[1.0, 0.0]);
        let trunc = d(&[0.95, 0.05]);
        let both = AllowedSet::from_mask(&trunc, vec![true, true]).unwrap();
        let v = tv_s(&p_star, &trunc, &both, TvsWeights::new(1.0, 2.0).unwrap()).unwrap();
        assert!((v - 0.1).abs() < 1e-12);

        assert!(tv_s(&p_star, &d(&[1.0]), &both, TvsWeights::default()).is_err());
        assert!(TvsWeights::new(0.0, 0.0).is_err());
        assert!(TvsWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn sample_scenario_examples() {
        let mut rng = Rng::new(5);
        let s = sample_scenario(12, 1, 0.0, &mut rng).unwrap();
        assert_eq!(s.support_size(), 1);
        assert!(s.true_entropy() < 1e-9);
        assert!(sample_scenario(12, 1, 0.5, &mut rng).is_err());
        assert!(sample_scenario(12, 13, 0.5, &mut rng).is_err());
        assert!(sample_scenario(12, 0, 0.0, &mut rng).is_err());
        assert!(sample_scenario(12, 4, 2.0, &mut rng).is_err());

        let s = sample_scenario(16, 8, 8f64.ln(), &mut rng).unwrap();
        assert_eq!(s.support_size(), 8);
        for &p in s.p_star().probs().iter().filter(|&&p| p > 0.0) {
            assert!((p - 0.125).abs() < 1e-6);
        }
    }

    #[test]
    fn recovery_without_smoothing() {
        let p = d(&[0.5, 0.3, 0.2, 0.0, 0.0]);
        let s = SmoothingScenario::new(p, uniform(5), 1.0, 0.0, 0.1, 0.8).unwrap();
        let r = verify_recovery(&s).unwrap();
        assert!(r.eta_star > 0.0 && r.eta_star < 0.2);
        assert!(r.support_loss_zero && r.minimal);
        assert_eq!(r.allowed_size, 3);
        assert_eq!(r.variation_loss, 0.0);
    }

    #[test]
    fn raised_threshold_is_not_minimal() {
        // Word 1 sits in the support just above eta* = 0.02.
        let p = d(&[0.97, 0.03, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = SmoothingScenario::new(p, uniform(10), 0.9, 0.0, 1.0, 0.8).unwrap();
        let star = eta_star(&s);
        assert!((star - 0.02).abs() < 1e-15);
        let model = smooth(&s).unwrap();
        let p1 = model.probs()[1];
        assert!(p1 > star);
        let r = verify_recovery(&s).unwrap();
        assert!(r.support_loss_zero && r.minimal);

        let raised = verify_threshold(&s, p1 + 1e-4).unwrap();
        assert!(raised.support_loss_zero);
        assert!(!raised.minimal);
        assert!(raised.variation_loss > r.variation_loss);
    }

    #[test]
    fn lowered_threshold_can_leak() {
        // lambda just above its floor and q at the top of its band on word 1 put that
        // out-of-support word right at eta*.
        let v = 4;
        let delta = 0.2;
        let q = d(&[(1.0 - delta) / 4.0, (1.0 + delta) / 4.0, 0.25, 0.25]);
        let s = SmoothingScenario::new(Dist::one_hot(v, 0).unwrap(), q, 0.8001, delta, 1.0, 0.8).unwrap();
        let star = eta_star(&s);
        let leak = verify_threshold(&s, star - 1e-3).unwrap();
        assert!(!leak.support_loss_zero);
        assert!(leak.support_loss > 0.0);
        assert!(verify_recovery(&s).unwrap().support_loss_zero);
    }

    #[test]
    fn batch_is_deterministic() {
        let a = verify_batch(8, 16, 3).unwrap();
        let b = verify_batch(8, 16, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(_, r)| r.support_loss_zero && r.minimal));
    }
}
