use thiserror::Error;

/// Errors produced by the grid, loss and metric routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },

    #[error("data length {len} does not match {height}x{width} grid")]
    LengthMismatch {
        height: usize,
        width: usize,
        len: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("confidence value {value} at row {row}, column {col} lies outside [0, 1]")]
    ConfidenceOutOfRange { row: usize, col: usize, value: f64 },

    #[error("loss mode `{mode}` requires the {missing} map")]
    MissingInput {
        mode: &'static str,
        missing: &'static str,
    },

    #[error("no valid pixels; the mean loss is undefined")]
    NoValidPixels,

    #[error("empty prediction sequence")]
    EmptySequence,

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
