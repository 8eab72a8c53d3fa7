use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (shapes, lengths, label domain).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared where finite values are required.
    #[error("numeric domain error in {location}: {detail}")]
    NumericDomain { location: String, detail: String },

    /// Invalid configuration or data that cannot be used as configured.
    #[error("configuration error: {0}")]
    Config(String),

    /// CSV header does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A data row could not be parsed or validated (1-based line numbers).
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// A training epoch aborted on a particular batch.
    #[error("epoch aborted at batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinct failure modes when reading a checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unreadable checkpoint {path}: {detail}")]
    Unreadable { path: PathBuf, detail: String },

    #[error("checkpoint format version {found:?} is not supported (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },

    #[error("checkpoint schema mismatch: {0}")]
    SchemaMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by non-finite arithmetic, possibly wrapped in a batch error.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NumericDomain { .. } | Error::Singular(_) => true,
            Error::Batch { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
