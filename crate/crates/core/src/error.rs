use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Nn(#[from] ccodec_nn::NnError),
}

impl CodecError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CodecError::Io { path: path.into(), source }
    }

    pub(crate) fn decode(offset: usize, msg: impl Into<String>) -> Self {
        CodecError::Decode { offset, msg: msg.into() }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, CodecError::Argument(_) | CodecError::Config(_) | CodecError::MissingCheckpoint(_))
    }
}

pub type Result<T> = std::result::Result<T, CodecError>;
