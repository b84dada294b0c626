//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unsupported version, unknown codes, malformed manifest.
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// Non-finite score; the index is (model, canary, token).
    #[error("non-finite score {value} at index [{model}, {canary}, {token}]")]
    NonFinite {
        model: usize,
        canary: usize,
        token: usize,
        value: f64,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("configuration conflict: {0}")]
    ConfigConflict(String),

    #[error("csv error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or flags rather than a failure
    /// during computation. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Truncated { .. }
                | Error::NonFinite { .. }
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::DimMismatch { .. }
                | Error::ConfigConflict(_)
                | Error::Csv(_)
        )
    }
}
