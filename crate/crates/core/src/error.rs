use std::io;
use std::path::PathBuf;

use wsfcn_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("checkpoint holds variant `{found}` but `{expected}` was requested")]
    VariantMismatch { expected: String, found: String },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    /// Whether the failure stems from bad user input rather than from the
    /// computation or the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Invalid(_) | Error::Format { .. } | Error::VariantMismatch { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
