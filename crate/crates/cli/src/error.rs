use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line tool, each tied to a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// One or more acceptance suites failed.
    #[error("acceptance failure: {0}")]
    Acceptance(String),

    #[error("configuration error in {path}: {detail}")]
    ConfigFile { path: PathBuf, detail: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Library(#[from] eda_pinn::Error),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 success, 1 acceptance failure, 2 configuration or data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Acceptance(_) => 1,
            CliError::Library(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
