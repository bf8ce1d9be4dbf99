use thiserror::Error;

/// Errors raised by tensor construction, graph ops and the optimizer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid target class {target} in row {row} (expected < {classes})")]
    InvalidTarget {
        row: usize,
        target: usize,
        classes: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::ShapeMismatch(msg.into()))
}
