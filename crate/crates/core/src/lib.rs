//! Agent orchestration with generator/assistant roles and bounded rollback.
//!
//! A *generator* model acts in a text environment while an *assistant* model
//! reviews the growing trajectory after each step. Assistant feedback is
//! gated by the mean token probability of its own generation; accepted
//! feedback that names an erroneous step triggers a rollback: the trajectory
//! is truncated, the environment is reset and the surviving action prefix is
//! replayed, and the generator retries with the feedback in its prompt.
//!
//! The crate ships two deterministic environments (an arithmetic 24 game and
//! a small storefront), a JSON-lines adapter for remote environments, an
//! OpenAI-compatible HTTP backend, and a scripted backend for tests.

pub mod backend;
pub mod controller;
pub mod env;
pub mod error;
pub mod feedback;
pub mod templates;
pub mod trajectory;

pub use backend::{GenerationParams, ModelBackend, ModelOutput, ScriptedBackend};
pub use controller::{
    ControllerConfig, ControllerEvent, EpisodeResult, EpisodeRunner, PromptSet, RollbackEvent,
};
pub use env::{EnvObservation, Environment, ThinkWrapper};
pub use error::{BackendError, ContractViolation, EnvError, EpisodeError};
pub use feedback::Feedback;
pub use trajectory::{MistakeRecord, Mode, Step, TaskInstance, Trajectory};
