use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure classes, each mapped to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot parse {path}: {message}")]
    ConfigParse { path: String, message: String },

    #[error("cannot ingest input: {0}")]
    Ingest(mlmm::Error),

    #[error("fit failed: {0}")]
    Fit(mlmm::Error),

    #[error("numerical check failed: {0}")]
    Check(String),

    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::ConfigParse { .. } => 3,
            CliError::Ingest(_) => 4,
            CliError::Fit(e) if e.is_numerical() => 6,
            CliError::Fit(_) => 5,
            CliError::Check(_) => 6,
            CliError::Io { .. } => 7,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            context: format!("cannot write {}", path.display()),
            message: err.to_string(),
        }
    }
}
