use thiserror::Error;

/// Errors raised by the training pipeline.
///
/// Malformed model output is never an error: it is encoded as data
/// (`parse_ok = false`, reward 0) so that RL can penalize it.
#[derive(Debug, Error)]
pub enum MasaError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("template render failed: {0}")]
    Render(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("token {token} is not valid at position {position}: {reason}")]
    InvalidToken {
        token: u32,
        position: usize,
        reason: &'static str,
    },

    #[error("unknown task context in prompt: {0}")]
    UnknownContext(String),

    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),

    #[error("parameter shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("missing old log-probabilities for rollout {0}")]
    MissingOldLogprobs(usize),

    #[error("expert buffer is empty")]
    EmptyBuffer,

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("log format error at line {line}: {message}")]
    Log { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MasaError> = std::result::Result<T, E>;
