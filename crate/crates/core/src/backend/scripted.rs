//! Deterministic scripted backend for LLM-free tests and replays.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{approx_token_count, GenerationParams, ModelBackend, ModelOutput};
use crate::error::BackendError;

/// One scripted behavior: if `pattern` occurs in the prompt, answer `reply`
/// with `probs` as the per-token probabilities. An empty pattern matches
/// every prompt, which makes a trailing rule a default reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub probs: Vec<f64>,
}

/// First-matching-rule backend. Referentially transparent: identical
/// prompt and params always produce identical output. Every prompt is
/// recorded in a call log for test assertions.
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    reports_probs: bool,
    calls: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        Self {
            rules,
            reports_probs: true,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Declare the backend unable to report probabilities; outputs carry an
    /// empty `token_probs`.
    pub fn without_probabilities(mut self) -> Self {
        self.reports_probs = false;
        self
    }

    /// Load rules from a JSON array: `[{"pattern": "...", "reply": "...", "probs": [..]}]`.
    pub fn from_json(json: &str) -> Result<Self, BackendError> {
        let rules: Vec<ScriptedRule> = serde_json::from_str(json)
            .map_err(|e| BackendError::InvalidConfig(format!("scripted rules: {e}")))?;
        for rule in &rules {
            if rule.probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                return Err(BackendError::InvalidConfig(format!(
                    "rule {:?}: probabilities must lie in (0, 1]",
                    rule.pattern
                )));
            }
        }
        Ok(Self::new(rules))
    }

    /// Prompts seen so far, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<ModelOutput, BackendError> {
        self.calls.lock().unwrap().push(prompt.to_string());
        let rule = self
            .rules
            .iter()
            .find(|rule| prompt.contains(&rule.pattern))
            .ok_or_else(|| BackendError::UnscriptedPrompt {
                prompt_hash: hex_sha256(prompt),
            })?;

        // Honor stop sequences: the text ends before the earliest one.
        let mut text = rule.reply.clone();
        for stop in &params.stop_sequences {
            if let Some(pos) = text.find(stop.as_str()) {
                text.truncate(pos);
            }
        }

        // Cap at max_new_tokens whitespace tokens; rejoining is an
        // approximation and only happens when a cut is needed.
        let max = params.max_new_tokens as usize;
        let token_count = text.split_whitespace().count();
        if token_count > max {
            let kept: Vec<&str> = text.split_whitespace().take(max).collect();
            text = kept.join(" ");
        }

        let emitted = text.split_whitespace().count().min(max) as u64;
        let token_probs = if !self.reports_probs {
            Vec::new()
        } else if rule.probs.is_empty() {
            vec![1.0; emitted as usize]
        } else {
            rule.probs.iter().copied().take(max).collect()
        };
        let completion_tokens = if token_probs.is_empty() {
            emitted
        } else {
            token_probs.len() as u64
        };

        Ok(ModelOutput {
            text,
            token_probs,
            prompt_tokens: approx_token_count(prompt),
            completion_tokens,
        })
    }

    fn reports_probabilities(&self) -> bool {
        self.reports_probs
    }
}

fn hex_sha256(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
