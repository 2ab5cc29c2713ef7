use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by sidforge operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),

    #[error("empty item id at line {0}")]
    EmptyItemId(usize),

    #[error("embedding file: {message} (byte offset {offset})")]
    EmbeddingFormat { offset: u64, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed SID {text:?}: {message}")]
    SidParse { text: String, message: String },

    #[error("token {token} out of range for level {level} (codebook size {size})")]
    TokenOutOfRange { level: usize, token: u32, size: usize },

    #[error("SID has {actual} levels, model has {expected}")]
    SidLength { expected: usize, actual: usize },

    #[error("unknown item id {0:?}")]
    UnknownItem(String),

    #[error("category {0:?} has no items in the probe training split")]
    ProbeMissingCategory(String),

    #[error("malformed conversational record: {0}")]
    Template(String),

    #[error("no task has any available examples")]
    NoExamples,

    #[error("codebook file: {0}")]
    ModelFormat(String),

    #[error("stale cache for stage {stage}: {message}; rerun with --force to rebuild")]
    StaleCache { stage: String, message: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
