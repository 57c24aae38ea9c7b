//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the engine, verifiers and pipelines.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Voting was attempted over an empty candidate set.
    #[error("no votes: no trace produced an extractable answer")]
    NoVotes,

    /// Every trace of a run failed at the backend.
    #[error("run failed: {0}")]
    RunFailed(String),

    /// The code-execution service is unreachable. Deliberately distinct
    /// from a 0.0 reward so sandbox outages cannot poison reward signals.
    #[error("reward unavailable: {0}")]
    RewardUnavailable(String),

    /// A fixture, dataset or config file failed to parse.
    #[error("load error at line {line}: {msg}")]
    Load { line: usize, msg: String },

    /// A generation backend failed mid-stream.
    #[error("backend error: {0}")]
    Backend(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
