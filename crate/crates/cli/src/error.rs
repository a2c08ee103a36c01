//! Failure classes and their exit codes.

use std::path::PathBuf;

use mininet::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{0}")]
    Audit(String),

    #[error("output directory {dir} is in use (remove {lock} if no run is active)")]
    Locked { dir: PathBuf, lock: PathBuf },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(what: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            what: what.into(),
            source,
        }
    }

    /// `(class, exit code)`; classes are disjoint.
    pub fn class(&self) -> (&'static str, u8) {
        match self {
            CliError::Io { .. } => ("io", 1),
            CliError::Config(_) => ("config", 2),
            CliError::Checkpoint { .. } => ("checkpoint", 5),
            CliError::Audit(_) => ("audit", 6),
            CliError::Locked { .. } => ("locked", 7),
            CliError::Core(e) => match e {
                Error::Io(_) => ("io", 1),
                Error::InvalidArgument(_) => ("config", 2),
                Error::Shape { .. }
                | Error::Record { .. }
                | Error::Dataset { .. }
                | Error::Manifest { .. }
                | Error::Image { .. } => ("data", 3),
                Error::NonFinite { .. } => ("numeric", 4),
                Error::Checkpoint(_) => ("checkpoint", 5),
            },
        }
    }

    /// `error class=<class> code=<n>: <reason>` on one line.
    pub fn line(&self) -> String {
        let (class, code) = self.class();
        let reason = self.to_string().replace(['\n', '\r'], "; ");
        format!("error class={class} code={code}: {reason}")
    }
}
