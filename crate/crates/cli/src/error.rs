use std::path::Path;

use thiserror::Error;

/// Usage and configuration failures; all map to exit code 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}: {msg}")]
    Config { file: String, msg: String },

    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Model(#[from] safeloop_core::Error),
}

impl CliError {
    pub fn field(field: &str, msg: impl ToString) -> Self {
        CliError::Field {
            field: field.to_owned(),
            msg: msg.to_string(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
