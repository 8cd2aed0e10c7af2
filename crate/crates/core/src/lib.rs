//! Truncation sampling viewed as desmoothing.
//!
//! * [`dist`]: categorical distributions, information measures, seeded sampling.
//! * [`truncation`]: top-k, top-p, typical, epsilon and eta allowed sets.
//! * [`smoothing`]: known-truth smoothing scenarios, probability bounds and
//!   the optimal threshold check.
//! * [`ngram`]: count-based n-gram models with uniform smoothing.
//! * [`analysis`]: entropy profiles, repetition experiments, checklist battery.
//! * [`io`]: dump and model file formats, hyperparameter presets.

pub mod analysis;
pub mod dist;
pub mod error;
pub mod io;
pub mod ngram;
pub mod smoothing;
pub mod truncation;

pub use dist::{
    avg_neg_log_prob, avg_neg_log_prob_after, entropy, kl_divergence, sample, total_variation, Dist, Rng, Scorer, Vocab,
};
pub use error::{Error, Result};
pub use ngram::{generate, tokenize, GenerationRecord, GenerationStatus, NGramModel, BOS};
pub use smoothing::{
    bound_absolute, bound_relative, eta_star, sample_scenario, smooth, tv_s, verify_recovery, verify_threshold,
    RecoveryReport, SmoothingScenario, TvsWeights,
};
pub use truncation::{
    allowed_epsilon, allowed_eta, allowed_top_k, allowed_top_p, allowed_typical, truncate, AllowedSet, Alpha, RuleKind,
    TruncationRule,
};
