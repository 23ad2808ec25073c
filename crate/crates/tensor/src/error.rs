use std::io;

use thiserror::Error;

/// Errors raised by tensor construction, the differentiable operations and
/// tensor file I/O.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: every extent must be at least 1")]
    InvalidShape { shape: [usize; 4] },

    #[error("data length {found} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: [usize; 4],
        expected: usize,
        found: usize,
    },

    #[error("{op}: {dim} mismatch (expected {expected}, found {found})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    #[error("batchnorm: statistics over a single element per channel are undefined in training mode")]
    DegenerateStatistics,

    #[error("loss must be a scalar tensor, got shape {shape:?}")]
    NotScalar { shape: [usize; 4] },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("variable {0} does not belong to this tape")]
    ForeignVar(usize),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl TensorError {
    pub fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            message: message.into(),
        }
    }

    pub(crate) fn mismatch(
        op: &'static str,
        dim: &'static str,
        expected: usize,
        found: usize,
    ) -> Self {
        TensorError::ShapeMismatch {
            op,
            dim,
            expected,
            found,
        }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
