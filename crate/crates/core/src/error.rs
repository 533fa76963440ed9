use thiserror::Error;

pub type Result<T> = std::result::Result<T, DpError>;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{n} points is below the minimum of {required:.1} for these parameters")]
    BelowThreshold { n: usize, required: f64 },

    #[error("grid does not cover the support: {0}")]
    GridCoverage(String),

    #[error("estimator returned a garbage outcome: {0}")]
    GarbageOutcome(String),

    #[error("private oracle failed: {0}")]
    OracleFailure(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl DpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DpError::InvalidParameter(msg.into())
    }
}
