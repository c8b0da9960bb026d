use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("provider returned {got} log-probabilities, expected the full vocabulary of {expected}")]
    PartialVocabulary { got: usize, expected: usize },

    #[error("transport error (retryable: {retryable}): {message}")]
    Transport { message: String, retryable: bool },

    #[error("token {0} is outside the shared support")]
    TokenOutOfSupport(u32),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("decoding aborted after {} tokens (partial: {partial:?}): {source}", token_ids.len())]
    DecodeAborted {
        partial: String,
        token_ids: Vec<u32>,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("{what}: {failed} of {total} items failed, above the {limit_pct}% limit")]
    TooManyFailures {
        what: &'static str,
        failed: usize,
        total: usize,
        limit_pct: u32,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for transport failures worth retrying (timeouts, 5xx).
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { retryable: true, .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
