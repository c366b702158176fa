//! Text-generation contract with per-token probability capture.
//!
//! Probabilities, not log-probabilities, are the stored unit: feedback
//! confidence is a mean over probabilities, so conversion from service
//! log-probability fields happens at the backend boundary.

mod http;
mod scripted;

pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{ScriptedBackend, ScriptedRule};

use serde::{Deserialize, Serialize};

use crate::error::BackendError;

/// Sampling and length controls for one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl GenerationParams {
    /// Defaults for the acting role: 100 new tokens at temperature 0.1.
    pub fn generator() -> Self {
        Self {
            max_new_tokens: 100,
            temperature: 0.1,
            stop_sequences: Vec::new(),
        }
    }

    /// Defaults for the reviewing role: 500 new tokens at temperature 0.1.
    pub fn assistant() -> Self {
        Self {
            max_new_tokens: 500,
            temperature: 0.1,
            stop_sequences: Vec::new(),
        }
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self::generator()
    }
}

/// Generated text plus the probability of each emitted token.
///
/// `token_probs` is empty only for backends declared prob-less at
/// construction; otherwise its length equals `completion_tokens` and every
/// entry lies in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub text: String,
    pub token_probs: Vec<f64>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A handle to a text-generation service. Handles shared across episode
/// workers must be internally synchronized; each call blocks until the
/// completion is available.
pub trait ModelBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams)
        -> Result<ModelOutput, BackendError>;

    /// False for backends declared unable to report token probabilities.
    fn reports_probabilities(&self) -> bool {
        true
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<T> {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<ModelOutput, BackendError> {
        self.as_ref().complete(prompt, params)
    }

    fn reports_probabilities(&self) -> bool {
        self.as_ref().reports_probabilities()
    }
}

/// Whitespace token count; the approximate unit used by the scripted
/// backend and by accounting when a service reports no usage numbers.
pub fn approx_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
