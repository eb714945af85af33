//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrnnError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("size mismatch in {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: String, index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GrnnError>,
    },
}

impl GrnnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GrnnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a pipeline stage name to an error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        GrnnError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, GrnnError>;
