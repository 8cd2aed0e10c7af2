use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary must contain at least one token")]
    EmptyVocab,

    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("allowed set is empty; cannot renormalize")]
    EmptyAllowedSet,

    #[error("context {0:?} was never observed and the model is unsmoothed")]
    UnseenContext(Vec<u32>),

    #[error("corpus has {len} tokens but order {order} needs at least {order}")]
    CorpusTooShort { len: usize, order: usize },

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("scenario violates an invariant: {0}")]
    InvalidScenario(String),

    #[error("no preset for {0}")]
    NoPreset(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("malformed checklist cases: {0}")]
    Cases(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
