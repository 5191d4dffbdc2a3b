use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-causal pair: query position {query} precedes key position {key}")]
    NonCausal { query: u64, key: u64 },

    #[error("hierarchy arity mismatch: positions have {positions} levels, split has {split}")]
    ArityMismatch { positions: usize, split: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("malformed task: {0}")]
    MalformedTask(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::InvalidConfig(_) => "invalid_config",
            Self::NonCausal { .. } => "non_causal",
            Self::ArityMismatch { .. } => "arity_mismatch",
            Self::LengthMismatch(_) => "length_mismatch",
            Self::NonFinite(_) => "non_finite",
            Self::Parse(_) => "parse",
            Self::MalformedTask(_) => "malformed_task",
            Self::Diverged { .. } => "diverged",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
        }
    }
}
