//! Environment contract: reset/step/done/reward, plus the think-action
//! wrapper and the JSON-lines remote adapter.

mod game24;
mod minishop;
mod remote;

pub use game24::{brute_force_24, format_rational, Game24Env, Game24State};
pub use minishop::{
    compute_reward, compute_reward_with, load_catalog, validate_catalog, validate_goal,
    MiniShopEnv, Product, Purchase, ShopState, ShoppingGoal,
};
pub use remote::{serve_env, RemoteEnv};

use serde::{Deserialize, Serialize};

use crate::error::EnvError;

/// What the environment returns for one executed action.
///
/// Invalid actions yield a textual observation with `valid_action = false`;
/// they never abort the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvObservation {
    pub text: String,
    pub reward: f64,
    pub done: bool,
    pub valid_action: bool,
}

impl EnvObservation {
    pub fn ongoing(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            reward: 0.0,
            done: false,
            valid_action: true,
        }
    }

    pub fn invalid(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            reward: 0.0,
            done: false,
            valid_action: false,
        }
    }

    pub fn terminal(text: impl Into<String>, reward: f64) -> Self {
        Self {
            text: text.into(),
            reward,
            done: true,
            valid_action: true,
        }
    }
}

/// The reset/step contract. Deterministic environments guarantee that
/// identical action sequences from reset produce identical observation
/// sequences, which is what makes reset-and-replay restoration sound.
pub trait Environment: Send {
    /// Reset to the task described by `config` and return the initial observation.
    fn reset(&mut self, config: &serde_json::Value) -> Result<String, EnvError>;

    /// Execute one action.
    fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError>;

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Observation text returned for `think[...]` actions.
pub const THINK_OBSERVATION: &str = "OK.";

/// True when the action is a `think[...]` pseudo-action: it starts with
/// `think[` and closes the bracket.
pub fn is_think_action(action: &str) -> bool {
    let trimmed = action.trim();
    trimmed.starts_with("think[") && trimmed.ends_with(']')
}

/// Wrapper that answers `think[...]` actions with a constant observation and
/// passes everything else to the inner environment. The constant response
/// keeps replay deterministic, so wrapping preserves determinism.
pub struct ThinkWrapper<E> {
    inner: E,
}

impl<E: Environment> ThinkWrapper<E> {
    pub fn new(inner: E) -> Self {
        Self { inner }
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment> Environment for ThinkWrapper<E> {
    fn reset(&mut self, config: &serde_json::Value) -> Result<String, EnvError> {
        self.inner.reset(config)
    }

    fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError> {
        if is_think_action(action) {
            return Ok(EnvObservation::ongoing(THINK_OBSERVATION));
        }
        self.inner.step(action)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

impl Environment for Box<dyn Environment> {
    fn reset(&mut self, config: &serde_json::Value) -> Result<String, EnvError> {
        self.as_mut().reset(config)
    }

    fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError> {
        self.as_mut().step(action)
    }

    fn is_deterministic(&self) -> bool {
        self.as_ref().is_deterministic()
    }
}

/// Run `actions` from a fresh reset and collect every observation.
/// Test harnesses call this twice to check the determinism contract.
pub fn observation_sequence<E: Environment>(
    env: &mut E,
    config: &serde_json::Value,
    actions: &[String],
) -> Result<(String, Vec<EnvObservation>), EnvError> {
    let initial = env.reset(config)?;
    let mut observations = Vec::with_capacity(actions.len());
    for action in actions {
        observations.push(env.step(action)?);
    }
    Ok((initial, observations))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Environment for Echo {
        fn reset(&mut self, _config: &serde_json::Value) -> Result<String, EnvError> {
            Ok("initial".into())
        }

        fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError> {
            Ok(EnvObservation::ongoing(format!("echo: {action}")))
        }
    }

    #[test]
    fn think_actions_short_circuit() {
        let mut env = ThinkWrapper::new(Echo);
        env.reset(&serde_json::Value::Null).unwrap();
        let obs = env.step("think[I should search first]").unwrap();
        assert_eq!(obs.text, "OK.");
        assert!(obs.valid_action);
        assert!(!obs.done);

        let obs = env.step("search[queen size bedspread]").unwrap();
        assert_eq!(obs.text, "echo: search[queen size bedspread]");
    }

    #[test]
    fn unclosed_think_brackets_pass_through() {
        let mut env = ThinkWrapper::new(Echo);
        env.reset(&serde_json::Value::Null).unwrap();
        let obs = env.step("think[no closing bracket").unwrap();
        assert!(obs.text.starts_with("echo:"));
    }
}
