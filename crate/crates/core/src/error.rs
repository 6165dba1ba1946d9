use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary empty after min_count filter")]
    EmptyVocabulary,

    #[error("degenerate partition: {popular} popular / {rare} rare words")]
    DegeneratePartition { popular: usize, rare: usize },

    #[error("empty class batch")]
    EmptyClassBatch,

    #[error("degenerate embedding row {0}")]
    DegenerateRow(usize),

    #[error("zero variance")]
    ZeroVariance,

    #[error("insufficient coverage: {covered} of {total} pairs in vocabulary")]
    InsufficientCoverage { covered: usize, total: usize },

    #[error("word not in vocabulary: {0}")]
    UnknownWord(String),

    #[error("initial embedding digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
