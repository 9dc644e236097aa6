use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at manifest row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("crop error: {0}")]
    Crop(String),

    #[error("resize error: {0}")]
    Resize(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("test leakage detected: {0}")]
    Leakage(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Ingestion { .. }
                | Error::Validation(_)
                | Error::Crop(_)
                | Error::Resize(_)
                | Error::Shape(_)
                | Error::UndefinedMetric(_)
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
