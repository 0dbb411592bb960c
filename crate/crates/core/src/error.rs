use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("attention mask row {row} allows no position")]
    DegenerateMask { row: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Index { id: usize, vocab: usize },

    #[error("expected a scalar, got shape {shape:?}")]
    Rank { shape: Vec<usize> },

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },

    #[error("step {step} outside [0, {limit})")]
    Step { step: usize, limit: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("non-finite loss at step {step} ({stage})")]
    Numeric { step: usize, stage: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable category used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::Rank { .. } | Error::DegenerateMask { .. } => "shape",
            Error::Index { .. } | Error::Length { .. } | Error::Step { .. } => "range",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Parse { .. } | Error::Json { .. } => "parse",
            Error::Numeric { .. } => "numeric",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
