use std::path::PathBuf;

/// Errors raised across the dispatching toolkit.
#[derive(Debug, thiserror::Error)]
pub enum OdpError {
    /// A caller supplied a value outside the accepted domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration parameter is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file could not be parsed; `line` is 1-based and counts the header.
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// An API contract was broken by the caller (e.g. an infeasible action).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A network produced a non-finite value.
    #[error("model corruption: {0}")]
    ModelCorruption(String),

    /// Two networks (or a checkpoint and a network) disagree on shape.
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, OdpError>;

impl OdpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OdpError::Io {
            path: path.into(),
            source,
        }
    }
}
