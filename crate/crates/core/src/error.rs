use std::path::PathBuf;

/// Errors produced by the quality-assessment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported channel count {0}")]
    UnsupportedChannels(usize),

    #[error("patch side {side} does not fit in a {rows}x{cols} image")]
    PatchTooLarge { side: usize, rows: usize, cols: usize },

    #[error("too few distinct training signals: need {needed}, found {found}")]
    TooFewSignals { needed: usize, found: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("dictionary invariant violated: {0}")]
    InvalidDictionary(String),

    #[error("malformed dictionary file: {0}")]
    MalformedFile(String),

    #[error("failed to decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
