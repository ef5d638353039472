use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsimError>;

#[derive(Debug, Error)]
pub enum DsimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value {value} in {context}")]
    NonFinite { context: &'static str, value: f64 },

    #[error("empirical weighting needs at least one response")]
    EmptyResponses,

    #[error("weighting measure has zero total mass")]
    ZeroMass,

    #[error("threshold list is empty")]
    EmptyThresholds,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("index vector has norm {0}, expected 1")]
    NonUnitAlpha(f64),

    #[error("candidate CDF value {value} at (z={z}, t={t}) is outside [0, 1]")]
    CdfOutOfRange { z: f64, t: f64, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quantile level {0} is outside (0, 1)")]
    InvalidLevel(f64),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("rate regression needs at least two usable points, got {0}")]
    InsufficientPoints(usize),

    #[error("model document: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_finite(context: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DsimError::NonFinite { context, value })
    }
}
