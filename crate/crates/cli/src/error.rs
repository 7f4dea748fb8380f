//! Command-line errors and their stable codes.

use prefopt_core::error::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing required flag --{0}")]
    MissingFlag(&'static str),

    #[error("{0}")]
    Args(String),

    #[error("invalid config {path}: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::MissingFlag(_) => "CFG001",
            CliError::Args(_) => "CLI001",
            CliError::Config { .. } => "CFG002",
            CliError::Core(e) => e.code(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io {
            path: "<run directory>".into(),
            source: e,
        })
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(CoreError::Json(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(CoreError::Csv(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;
