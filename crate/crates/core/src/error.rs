use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A byte-stream (JPEG, feature file, checkpoint, index) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file uses a feature this crate does not implement.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Two artifacts that must agree (dimensions, configs, fingerprints) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// Training diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad input rather than bad bytes or IO.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Mismatch(_) | Error::Numerical(_)
        )
    }
}
