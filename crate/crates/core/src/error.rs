use std::path::PathBuf;

/// Errors surfaced by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for numeric failures, 2 for configuration and ingestion problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
