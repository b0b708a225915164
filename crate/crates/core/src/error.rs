//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("schema version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("exact enumeration exceeded budget of {max_paths} terminal paths")]
    EnumerationOverflow { max_paths: usize },

    #[error("remote policy backend unavailable: {msg} (retryable)")]
    RemoteUnavailable { msg: String },

    #[error("numerical divergence at epoch {epoch}: non-finite parameters")]
    NumericalDivergence { epoch: usize },

    #[error("artifact corpus hash mismatch: {left} vs {right}")]
    CorpusMismatch { left: String, right: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

/// Signal emitted when a Type-1 task is excluded because the base policy's
/// greedy initial answer does not match the ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedTask {
    pub task_id: String,
    pub greedy_answer: String,
}

impl std::fmt::Display for SkippedTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "task {} skipped: greedy initial answer {:?} is not the ground truth",
            self.task_id, self.greedy_answer
        )
    }
}
