use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the harness.
///
/// Variants are grouped so callers (the CLI in particular) can map them onto
/// distinct exit codes via [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed CSV: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: row {row}: unknown label {value:?} for scheme {scheme:?}")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        value: String,
        scheme: String,
    },

    #[error("{path}: row {row}: empty text")]
    EmptyText { path: PathBuf, row: usize },

    #[error("{path}: duplicate header column {column:?}")]
    DuplicateHeader { path: PathBuf, column: String },

    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("invalid label scheme: {0}")]
    Scheme(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid selection: {0}")]
    Selection(String),

    #[error("vector space: {0}")]
    VectorSpace(String),

    #[error("prompt: {0}")]
    Prompt(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("prompt of ~{estimate} tokens exceeds the {window}-token window of {model}")]
    ContextOverflow {
        model: String,
        estimate: usize,
        window: usize,
    },

    #[error("transport failure for {model} after {attempts} attempt(s): {}", trace.join("; "))]
    Transport {
        model: String,
        attempts: u32,
        trace: Vec<String>,
    },

    #[error("protocol error from {model}: {message}")]
    Protocol { model: String, message: String },

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("{path}: line {line}: {message}")]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("report: {0}")]
    Report(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Transport,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Scheme(_) | Error::Split(_) | Error::Prompt(_) => ErrorCategory::Config,
            Error::Transport { .. } | Error::Protocol { .. } | Error::ContextOverflow { .. } => {
                ErrorCategory::Transport
            }
            Error::Embedding(_) => ErrorCategory::Transport,
            _ => ErrorCategory::Data,
        }
    }
}
