use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Invalid { path: String, message: String },

    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] covfk_core::Error),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Syntax { .. } | CliError::Invalid { .. } => 2,
            _ => 1,
        }
    }

    pub fn invalid(path: &Path, message: impl Into<String>) -> Self {
        CliError::Invalid {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
