use std::path::PathBuf;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operands with incompatible shapes, with a dimension report.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A precondition on an argument failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {what} (index {index})")]
    NonFinite { what: String, index: usize },

    /// A class index outside `0..classes`.
    #[error("class index {index} out of range (classes = {classes})")]
    ClassOutOfRange { index: usize, classes: usize },

    /// Referenced instance id is not part of the model.
    #[error("unknown instance id: {0}")]
    UnknownInstance(String),

    /// File exists but its contents do not parse.
    #[error("failed to parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    /// Checkpoint or dataset written by an incompatible version.
    #[error("version mismatch: found {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
