//! Behavioural experiments built on the truncation rules.

pub mod checklist;
pub mod profile;
pub mod repetition;

pub use checklist::{
    builtin_cases, load_cases, parse_cases, run_checklist, Check, ChecklistCase, ChecklistReport, ChecklistRow,
    Expectation, DEFAULT_PRINT_THRESHOLD,
};
pub use profile::{
    default_bucket_edges, entropy_profile, entropy_profile_par, EntropyBucketStats, EntropyProfile, ProfileReport,
};
pub use repetition::{
    build_adversarial_prompt, detect_repetition, detect_repetition_after, repetition_experiment, RepetitionConfig,
    RepetitionSummary, RepetitionVerdict, DEFAULT_REPETITION_THRESHOLD,
};
