use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input for stage: {what} ({})", path.display())]
    StageInputMissing { what: &'static str, path: PathBuf },
    #[error("cannot ingest {}: {message}", path.display())]
    Ingest { path: PathBuf, message: String },
    #[error("{0}")]
    BackendUnavailable(String),
    #[error("{0}")]
    Other(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Other(_) => 1,
            Self::Config(_) => 2,
            Self::StageInputMissing { .. } => 3,
            Self::Ingest { .. } => 4,
            Self::BackendUnavailable(_) => 5,
        }
    }

    pub fn ingest(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Ingest {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.to_string())
    }
}
