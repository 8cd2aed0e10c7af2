//! Repetition detection and the adversarial-repetition experiment.

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{avg_neg_log_prob_after, Rng, Scorer};
use crate::error::{Error, Result};
use crate::ngram::{generate, GenerationStatus, NGramModel};
use crate::truncation::TruncationRule;

/// Samples scoring below this many nats per token count as repetitions.
pub const DEFAULT_REPETITION_THRESHOLD: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepetitionVerdict {
    pub avg_nll: f64,
    pub is_repetition: bool,
}

/// `prompt` followed by `extra_reps` more copies of its last `tail_len` ids.
pub fn build_adversarial_prompt(prompt: &[u32], tail_len: usize, extra_reps: usize) -> Result<Vec<u32>> {
    if prompt.len() < tail_len {
        return Err(Error::param(format!(
            "prompt of {} tokens is shorter than the tail of {tail_len}",
            prompt.len()
        )));
    }
    let tail = &prompt[prompt.len() - tail_len..];
    let mut out = Vec::with_capacity(prompt.len() + tail_len * extra_reps);
    out.extend_from_slice(prompt);
    for _ in 0..extra_reps {
        out.extend_from_slice(tail);
    }
    Ok(out)
}

pub fn detect_repetition<S: Scorer + ?Sized>(sample: &[u32], scorer: &S, threshold: f64) -> Result<RepetitionVerdict> {
    detect_repetition_after(&[], sample, scorer, threshold)
}

/// Scores `sample` as a continuation of `prefix`.
pub fn detect_repetition_after<S: Scorer + ?Sized>(
    prefix: &[u32],
    sample: &[u32],
    scorer: &S,
    threshold: f64,
) -> Result<RepetitionVerdict> {
    if threshold.is_nan() {
        return Err(Error::param("threshold is NaN"));
    }
    let avg_nll = avg_neg_log_prob_after(prefix, sample, scorer)?;
    Ok(RepetitionVerdict {
        avg_nll,
        is_repetition: avg_nll < threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RepetitionConfig {
    pub tail_len: usize,
    pub extra_reps: usize,
    pub completions_per_prompt: usize,
    pub max_steps: usize,
    pub threshold: f64,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        RepetitionConfig {
            tail_len: 3,
            extra_reps: 5,
            completions_per_prompt: 5,
            max_steps: 512,
            threshold: DEFAULT_REPETITION_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletionOutcome {
    pub prompt_index: usize,
    pub completion_index: usize,
    pub length: usize,
    pub avg_nll: f64,
    pub is_repetition: bool,
    pub stopped_early: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepetitionSummary {
    /// Fraction of completions flagged as repetitions.
    pub rate: f64,
    pub outcomes: Vec<CompletionOutcome>,
}

/// Extends each prompt with repeats of its tail, samples completions under
/// `rule` and reports how many keep repeating, scored by the same model.
///
/// Completion `j` of prompt `i` draws from stream
/// `i * completions_per_prompt + j` of `seed`, so results do not depend on
/// the thread count.
pub fn repetition_experiment(
    model: &NGramModel,
    prompts: &[Vec<u32>],
    rule: Option<&TruncationRule>,
    config: &RepetitionConfig,
    seed: u64,
) -> Result<RepetitionSummary> {
    if prompts.is_empty() {
        return Err(Error::param("no prompts"));
    }
    if config.completions_per_prompt == 0 {
        return Err(Error::param("completions_per_prompt must be at least 1"));
    }
    if config.max_steps == 0 {
        return Err(Error::param("max_steps must be at least 1"));
    }
    let adversarial = prompts
        .iter()
        .map(|p| build_adversarial_prompt(p, config.tail_len, config.extra_reps))
        .collect::<Result<Vec<_>>>()?;
    let per = config.completions_per_prompt;
    let outcomes = (0..prompts.len() * per)
        .into_par_iter()
        .map(|job| {
            let (pi, ci) = (job / per, job % per);
            let prompt = &adversarial[pi];
            let mut rng = Rng::derive(seed, job as u64);
            let rec = generate(model, prompt, config.max_steps, rule, &mut rng)?;
            let verdict = if rec.generated_ids.is_empty() {
                RepetitionVerdict {
                    avg_nll: f64::INFINITY,
                    is_repetition: false,
                }
            } else {
                detect_repetition_after(prompt, &rec.generated_ids, model, config.threshold)?
            };
            Ok(CompletionOutcome {
                prompt_index: pi,
                completion_index: ci,
                length: rec.generated_ids.len(),
                avg_nll: verdict.avg_nll,
                is_repetition: verdict.is_repetition,
                stopped_early: rec.status != GenerationStatus::Completed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let flagged = outcomes.iter().filter(|o| o.is_repetition).count();
    Ok(RepetitionSummary {
        rate: flagged as f64 / outcomes.len() as f64,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Dist;
    use crate::ngram::tokenize;

    #[test]
    fn adversarial_prompt_examples() {
        assert_eq!(
            build_adversarial_prompt(&[1, 2, 3, 4, 5], 3, 2).unwrap(),
            vec![1, 2, 3, 4, 5, 3, 4, 5, 3, 4, 5]
        );
        assert_eq!(build_adversarial_prompt(&[9, 8, 7], 3, 0).unwrap(), vec![9, 8, 7]);
        let p: Vec<u32> = (0..10).collect();
        assert_eq!(build_adversarial_prompt(&p, 3, 5).unwrap().len(), 25);
        assert!(build_adversarial_prompt(&[1, 2], 3, 5).is_err());
    }

    #[test]
    fn detect_repetition_on_cycle_and_uniform() {
        let (vocab, ids) = tokenize(&"a b c ".repeat(50));
        let m = NGramModel::train(vocab, &ids, 2, 0.0).unwrap();
        let v = detect_repetition(&ids[..30], &m, DEFAULT_REPETITION_THRESHOLD).unwrap();
        assert!(v.avg_nll < 0.01 && v.is_repetition);

        let uniform = |_: &[u32]| Dist::uniform(21);
        let v = detect_repetition(&[3, 1, 4, 1, 5], &uniform, 1.0).unwrap();
        assert!(v.avg_nll >= 3.0 && !v.is_repetition);
        assert!(
            detect_repetition(&[3, 1], &uniform, f64::INFINITY)
                .unwrap()
                .is_repetition
        );

        let never = |_: &[u32]| Dist::one_hot(21, 0);
        assert!(!detect_repetition(&[3], &never, f64::INFINITY).unwrap().is_repetition);
        assert!(detect_repetition(&[], &uniform, 1.0).is_err());
        assert!(detect_repetition(&[1], &uniform, f64::NAN).is_err());
    }

    #[test]
    fn cyclic_model_always_repeats() {
        let (vocab, ids) = tokenize(&"a b c ".repeat(40));
        let m = NGramModel::train(vocab, &ids, 3, 0.0).unwrap();
        let config = RepetitionConfig {
            max_steps: 64,
            ..Default::default()
        };
        let s = repetition_experiment(&m, &[ids[..6].to_vec(), ids[1..5].to_vec()], None, &config, 7).unwrap();
        assert_eq!(s.rate, 1.0);
        assert_eq!(s.outcomes.len(), 10);
    }

    #[test]
    fn experiment_rejects_degenerate_input() {
        let (vocab, ids) = tokenize(&"a b c ".repeat(5));
        let m = NGramModel::train(vocab, &ids, 2, 0.0).unwrap();
        let zero = RepetitionConfig {
            completions_per_prompt: 0,
            ..Default::default()
        };
        assert!(repetition_experiment(&m, std::slice::from_ref(&ids), None, &zero, 0).is_err());
        assert!(repetition_experiment(&m, &[], None, &RepetitionConfig::default(), 0).is_err());
        assert!(repetition_experiment(&m, &[vec![0]], None, &RepetitionConfig::default(), 0).is_err());
    }
}
