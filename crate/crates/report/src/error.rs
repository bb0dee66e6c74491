use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("incomplete evidence record: {0}")]
    IncompleteEvidence(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("report for {cell} {date} is not grounded in its evidence: {detail}")]
    Grounding { cell: String, date: String, detail: String },
    #[error("backend request failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: usize, detail: String },
    #[error("{0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] searisk_core::Error),
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.into(),
        source,
    }
}
