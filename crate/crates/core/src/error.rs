use thiserror::Error;

/// Errors shared across the library layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least 2 positions for a kinematics profile, got {0}")]
    EmptyProfile(usize),

    #[error("track length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
