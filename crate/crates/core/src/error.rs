use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reference")]
    EmptyReference,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no samples")]
    NoSamples,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("malformed service: {0:?}")]
    MalformedService(String),
    #[error("incompatible cascade")]
    IncompatibleCascade,
    #[error("invalid token: {0:?}")]
    InvalidToken(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
    #[error("mt: {0}")]
    Mt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
