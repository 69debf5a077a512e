use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedCodec { path: PathBuf, reason: String },

    #[error("{path} contains no audio samples")]
    EmptyAudio { path: PathBuf },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("no usable chunks in {0}")]
    NoChunks(PathBuf),

    #[error("feature store error: {0}")]
    Store(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Unreadable { .. } => "unreadable",
            Error::UnsupportedCodec { .. } => "unsupported_codec",
            Error::EmptyAudio { .. } => "empty_audio",
            Error::InvalidInput(_) => "invalid_input",
            Error::Shape { .. } => "shape",
            Error::NoChunks(_) => "no_chunks",
            Error::Store(_) => "store",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
