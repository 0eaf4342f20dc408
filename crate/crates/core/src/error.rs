use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at byte offset {offset}: {source}")]
    Stream { offset: u64, source: io::Error },

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Length { expected: u64, actual: u64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("line {line}: trial {trial_id:?}, field `{field}`: {reason}")]
    Record {
        line: usize,
        trial_id: Option<String>,
        field: String,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("score cannot be normalized: noise ceiling {0} <= 0")]
    NotNormalizable(f64),

    #[error("unsupported design: {0}")]
    UnsupportedDesign(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
