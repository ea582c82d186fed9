use thiserror::Error;

use crate::linalg::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { iteration: usize, what: &'static str },

    #[error("invariant violated at iteration {iteration}: {what}")]
    InvariantViolation { iteration: usize, what: String },

    #[error("trace format: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: &Shape, found: &Shape) -> Self {
        Error::ShapeMismatch {
            expected: expected.clone(),
            found: found.clone(),
        }
    }

    /// Iteration index carried by numeric failures.
    pub fn iteration(&self) -> Option<usize> {
        match self {
            Error::NonFinite { iteration, .. } | Error::InvariantViolation { iteration, .. } => {
                Some(*iteration)
            }
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
