use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (jitter escalated to {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("every hyperparameter restart failed to factorise the Gram matrix")]
    AllRestartsFailed,

    #[error("sampling is not uniform: interval {index} is {interval} s, nominal {nominal} s")]
    NonUniformSampling { index: usize, interval: f64, nominal: f64 },

    #[error("degenerate regression design on the {axis} axis: control is constant")]
    DegenerateDesign { axis: char },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no path found after {iterations} iterations")]
    NoPathFound { iterations: usize },

    #[error("controller failed at step {step}: {source}")]
    Controller {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
