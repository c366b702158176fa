//! Error types shared across the crate.

use thiserror::Error;

/// A caller violated a documented precondition.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("contract violation: {0}")]
pub struct ContractViolation(pub String);

/// Failures raised by model backends.
#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport-level failure after all retries; carries the attempt count.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// The service answered but the body could not be interpreted.
    #[error("malformed service response: {0}")]
    MalformedResponse(String),

    /// A scripted backend received a prompt no rule matches.
    #[error("unscripted prompt (sha256 {prompt_hash})")]
    UnscriptedPrompt { prompt_hash: String },

    /// The backend was declared prob-less at construction.
    #[error("backend does not report token probabilities")]
    ProbabilitiesUnsupported,

    /// Backend definition could not be loaded.
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// Failures raised by environments.
#[derive(Debug, Error)]
pub enum EnvError {
    /// The reset payload does not match what the environment expects.
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),

    /// A remote peer broke the wire protocol; `line` is 1-based on the connection.
    #[error("protocol violation on line {line}: {message}")]
    ProtocolViolation { line: u64, message: String },

    /// Remote connection failure.
    #[error("remote environment transport error: {0}")]
    Transport(String),

    /// Stepping an episode that already reported `done`.
    #[error("episode is finished; reset before stepping again")]
    EpisodeFinished,
}

/// Failures that abort an episode.
#[derive(Debug, Error)]
pub enum EpisodeError {
    /// Replayed observation differed from the recorded one at `step`.
    #[error("replay divergence at step {step}: recorded {recorded:?}, replayed {replayed:?}")]
    ReplayDivergence {
        step: usize,
        recorded: String,
        replayed: String,
    },

    /// Rollback requested against a non-deterministic environment.
    #[error("environment is not deterministic; rollback requires reset-and-replay restoration")]
    NonDeterministicEnv,

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Contract(#[from] ContractViolation),
}
