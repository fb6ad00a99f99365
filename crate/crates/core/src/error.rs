use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({row}, {col}) out of bounds for {height}x{width} frame")]
    Index {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: image error: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("clip {clip_id}: {message}")]
    Clip { clip_id: String, message: String },

    #[error("duplicate clip id `{0}`")]
    DuplicateId(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("processing produced no output frames")]
    EmptyOutput,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
