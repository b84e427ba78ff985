//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the amrg library.
#[derive(Debug, Error)]
pub enum AmrgError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate case_id \"{0}\"")]
    DuplicateCaseId(String),

    #[error("empty foreground: no pixel above threshold {threshold}")]
    EmptyForeground { threshold: u16 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("CIDEr undefined for single-document corpus")]
    SingleDocumentCorpus,

    #[error("label lists differ in length: {pred} predictions vs {gold} golds")]
    LengthMismatch { pred: usize, gold: usize },

    #[error("missing generated report for case \"{0}\"")]
    MissingCase(String),

    #[error("attention row {0} is fully masked")]
    FullyMaskedRow(usize),

    #[error("sequence length {len} exceeds maximum {max}")]
    Overlong { len: usize, max: usize },

    #[error("loss undefined: every position is padding")]
    AllPositionsPadded,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("image decode error on {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, AmrgError>;

impl AmrgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AmrgError::Io {
            path: path.into(),
            source,
        }
    }
}
