use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing mandatory column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("point ({lat}, {lon}) lies outside the region")]
    OutOfRegion { lat: f64, lon: f64 },
    #[error("cannot parse cell id `{0}`")]
    BadCellId(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("both classes must be present: {0}")]
    SingleClass(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
