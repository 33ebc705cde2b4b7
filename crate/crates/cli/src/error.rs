use std::path::{Path, PathBuf};

use odp_core::OdpError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] OdpError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    /// A prerequisite artifact is absent; the message says how to make it.
    #[error("{0}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
