use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("all particle weights are degenerate")]
    DegenerateWeights,

    #[error("wiring error: expected {expected} space, got {found}")]
    Wiring { expected: String, found: String },

    #[error("unknown action label `{0}`")]
    UnknownAction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures caused by the numbers rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Conditioning(_) | Error::Diverged { .. } | Error::DegenerateWeights
        )
    }
}
