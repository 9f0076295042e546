use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid reward function: {0}")]
    InvalidReward(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Every violation found while validating a configuration.
    #[error("configuration has {} violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    Violations(Vec<String>),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("malformed runs file: {0}")]
    RunsFile(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
