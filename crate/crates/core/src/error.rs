use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {path} at line {line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("malformed lexicon line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: String },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("duplicate example id `{0}`")]
    DuplicateId(String),

    #[error("unknown example id `{0}`")]
    UnknownId(String),

    #[error("class {class} has {available} examples, {requested} requested")]
    InsufficientExamples {
        class: u32,
        available: usize,
        requested: usize,
    },

    #[error("pool size must be positive")]
    EmptyPool,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("classifier head has no classes")]
    EmptyHead,

    #[error("class {0} is not present in the classifier head")]
    UnknownClass(u32),

    #[error("example `{0}` carries no label")]
    Unlabeled(String),

    #[error("example `{id}` has provenance {found}, expected {expected}")]
    Provenance {
        id: String,
        found: &'static str,
        expected: &'static str,
    },

    #[error("at least {needed} classes required, got {got}")]
    TooFewClasses { needed: usize, got: usize },

    #[error("requested {requested} items from {available}")]
    TooMany { requested: usize, available: usize },

    #[error("annotation budget exhausted for task {task}")]
    BudgetExhausted { task: usize },

    #[error("memory buffer is empty")]
    EmptyMemory,

    #[error("{0} is out of range")]
    OutOfRange(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
