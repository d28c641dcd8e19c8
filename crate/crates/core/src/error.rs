use std::path::PathBuf;

use crate::routing::FeasibilityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: line {line}, column {column}: {message}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("assignment is infeasible: {0}")]
    Infeasible(Box<FeasibilityReport>),

    #[error("instance has {tasks} tasks, exact solver limit is {max}")]
    TooLarge { tasks: usize, max: usize },

    #[error("clock error: step {now} precedes last update {last}")]
    Clock { now: u64, last: u64 },

    #[error("training halted: non-finite {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown method `{0}` (expected couav, centralized, no-sharing, rnd, ga or greedy)")]
    UnknownMethod(String),

    #[error("trajectory log is truncated: {0}")]
    TruncatedLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
