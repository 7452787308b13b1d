use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("integrator step failure at t = {t} s (step {step:e} s below minimum)")]
    StepFailure { t: f64, step: f64 },

    #[error("threshold {threshold} not reached within {horizon} s")]
    NotReached { threshold: f64, horizon: f64 },

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("time grids are not aligned: {0}")]
    Misaligned(String),

    #[error("eigen-decomposition failed: {0}")]
    Decomposition(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::InvalidState(_) => "invalid-state",
            Error::StepFailure { .. } => "step-failure",
            Error::NotReached { .. } => "not-reached",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::Misaligned(_) => "misaligned",
            Error::Decomposition(_) => "decomposition",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
