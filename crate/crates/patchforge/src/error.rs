//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A tensor or operator received shapes that violate its contract.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// An operation's preconditions were violated (bad labels, bad layer
    /// name, non-scalar backward root, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The engine was asked to do something in the wrong state
    /// (e.g. backward without an active tape).
    #[error("state error: {0}")]
    State(String),

    /// Invalid input data (patch outside slide, non-square patch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A manifest, checkpoint or config file failed to parse or verify.
    #[error("parse error: {0}")]
    Parse(String),

    /// Checkpoint integrity failure (bad magic, checksum, truncation).
    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    /// Schema or format version mismatch.
    #[error("version mismatch: {0}")]
    Version(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable kind tag, used by the CLI for exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid-shape",
            Error::Contract(_) => "contract",
            Error::State(_) => "state",
            Error::InvalidInput(_) => "invalid-input",
            Error::Parse(_) => "parse",
            Error::Integrity(_) => "integrity",
            Error::Version(_) => "version",
            Error::Diverged(_) => "diverged",
            Error::Io { .. } => "io",
        }
    }
}
