use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operator received operands whose extents do not line up.
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: String,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("record '{id}': {reason}")]
    Record { id: String, reason: String },

    /// Every record that failed to load, in manifest order.
    #[error("{}", summarize_failures(.total, .failures))]
    Dataset {
        total: usize,
        failures: Vec<RecordFailure>,
    },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordFailure {
    pub id: String,
    pub reason: String,
}

fn summarize_failures(total: &usize, failures: &[RecordFailure]) -> String {
    let mut s = format!("{} of {total} records failed to load", failures.len());
    if let Some(first) = failures.first() {
        s.push_str(&format!("; record '{}': {}", first.id, first.reason));
    }
    s
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version error: {0}")]
    Version(String),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint shape mismatch for '{name}': expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint malformed: {0}")]
    Malformed(String),
}
