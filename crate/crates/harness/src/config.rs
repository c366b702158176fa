//! Run configuration: a single TOML (or JSON) document, environment
//! variables for secrets, CLI flags overriding file values.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rollback_core::backend::{GenerationParams, HttpBackend, HttpBackendConfig, ScriptedBackend};
use rollback_core::trajectory::Mode;
use rollback_core::ControllerConfig;

/// Which built-in or remote environment a run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Game24,
    Minishop,
    Remote,
}

impl EnvKind {
    /// Step caps sized to exemplar trajectories plus rollback headroom.
    pub fn default_max_env_steps(self) -> usize {
        match self {
            EnvKind::Game24 => 12,
            EnvKind::Minishop => 15,
            EnvKind::Remote => 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// Task instances: JSONL of `{"id","numbers"}` for game24, shopping
    /// goals for minishop, `{"id","config"}` objects for remote.
    pub instances: PathBuf,
    /// Product catalog (minishop only).
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    /// Remote endpoint: `tcp:<host:port>` or `cmd:<program> [args...]`.
    #[serde(default)]
    pub endpoint: Option<String>,
}

/// One model role: a scripted rule file or an HTTP service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Scripted: path to the JSON rule list.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    /// HTTP: service base URL; falls back to $OPENAI_BASE_URL.
    #[serde(default)]
    pub base_url: Option<String>,
    /// HTTP: model name; falls back to $OPENAI_MODEL.
    #[serde(default)]
    pub model: Option<String>,
    /// HTTP: name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// HTTP: request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// HTTP: retries after the first attempt.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Declare the service unable to report token log-probabilities.
    #[serde(default)]
    pub prob_less: bool,
    #[serde(default)]
    pub params: Option<GenerationParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerSection {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_wait_info")]
    pub wait_info_k: usize,
    #[serde(default = "default_span")]
    pub max_rollback_span: usize,
    #[serde(default = "default_attempts")]
    pub max_rollback_attempts: usize,
    /// Defaults to the environment's own cap when omitted.
    #[serde(default)]
    pub max_env_steps: Option<usize>,
    #[serde(default = "default_trials")]
    pub reflexion_trials: usize,
    #[serde(default)]
    pub mode: Mode,
}

fn default_theta() -> f64 {
    0.93
}
fn default_wait_info() -> usize {
    6
}
fn default_span() -> usize {
    6
}
fn default_attempts() -> usize {
    6
}
fn default_trials() -> usize {
    2
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            wait_info_k: default_wait_info(),
            max_rollback_span: default_span(),
            max_rollback_attempts: default_attempts(),
            max_env_steps: None,
            reflexion_trials: default_trials(),
            mode: Mode::ActOnly,
        }
    }
}

/// Per-environment prompt files overriding the built-in templates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptsSection {
    #[serde(default)]
    pub generator_exemplars: Option<PathBuf>,
    #[serde(default)]
    pub assistant_template: Option<PathBuf>,
    #[serde(default)]
    pub assistant_examples: Option<PathBuf>,
    #[serde(default)]
    pub reflection_template: Option<PathBuf>,
}

/// The whole run description. `seed` fixes instance order and, with
/// scripted backends, the entire run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    pub output_dir: PathBuf,
    pub env: EnvSection,
    #[serde(default)]
    pub controller: ControllerSection,
    pub generator: BackendSection,
    pub assistant: BackendSection,
    #[serde(default)]
    pub prompts: PromptsSection,
}

fn default_seed() -> u64 {
    0
}
fn default_parallel() -> usize {
    1
}

/// CLI-level overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub theta: Option<f64>,
    pub wait_info: Option<usize>,
    pub max_rollbacks: Option<usize>,
    pub rollback_span: Option<usize>,
    pub mode: Option<Mode>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub max_env_steps: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a TOML or JSON config file; paths inside are resolved
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).context("parsing JSON config")?
        } else {
            toml::from_str(&text).context("parsing TOML config")?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.env.instances);
        if let Some(catalog) = self.env.catalog.as_mut() {
            resolve(catalog);
        }
        if let Some(rules) = self.generator.rules.as_mut() {
            resolve(rules);
        }
        if let Some(rules) = self.assistant.rules.as_mut() {
            resolve(rules);
        }
        for slot in [
            &mut self.prompts.generator_exemplars,
            &mut self.prompts.assistant_template,
            &mut self.prompts.assistant_examples,
            &mut self.prompts.reflection_template,
        ]
        .into_iter()
        .flatten()
        {
            resolve(slot);
        }
        resolve(&mut self.output_dir);
    }

    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(v) = overrides.theta {
            self.controller.theta = v;
        }
        if let Some(v) = overrides.wait_info {
            self.controller.wait_info_k = v;
        }
        if let Some(v) = overrides.max_rollbacks {
            self.controller.max_rollback_attempts = v;
        }
        if let Some(v) = overrides.rollback_span {
            self.controller.max_rollback_span = v;
        }
        if let Some(v) = overrides.mode {
            self.controller.mode = v;
        }
        if let Some(v) = overrides.trials {
            self.controller.reflexion_trials = v;
        }
        if let Some(v) = overrides.seed {
            self.seed = v;
        }
        if let Some(v) = overrides.parallel {
            self.parallel = v;
        }
        if let Some(v) = overrides.max_env_steps {
            self.controller.max_env_steps = Some(v);
        }
        if let Some(v) = &overrides.output_dir {
            self.output_dir = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Values above 1.0 are allowed: an impossible threshold discards
        // every feedback, which is the no-rollback ablation.
        if !self.controller.theta.is_finite() || self.controller.theta < 0.0 {
            bail!("theta must be a non-negative number");
        }
        if self.controller.max_rollback_span < 1 {
            bail!("max_rollback_span must be >= 1");
        }
        if self.controller.reflexion_trials < 1 {
            bail!("reflexion_trials must be >= 1");
        }
        if self.parallel < 1 {
            bail!("parallel must be >= 1");
        }
        if self.env.kind == EnvKind::Minishop && self.env.catalog.is_none() {
            bail!("minishop runs need env.catalog");
        }
        if self.env.kind == EnvKind::Remote && self.env.endpoint.is_none() {
            bail!("remote runs need env.endpoint");
        }
        for (role, section) in [("generator", &self.generator), ("assistant", &self.assistant)] {
            if section.kind == BackendKind::Scripted && section.rules.is_none() {
                bail!("{role}: scripted backend needs a rules file");
            }
        }
        Ok(())
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            theta: c.theta,
            wait_info_k: c.wait_info_k,
            max_rollback_span: c.max_rollback_span,
            max_rollback_attempts: c.max_rollback_attempts,
            max_env_steps: c
                .max_env_steps
                .unwrap_or_else(|| self.env.kind.default_max_env_steps()),
            reflexion_trials: c.reflexion_trials,
            generator_params: self
                .generator
                .params
                .clone()
                .unwrap_or_else(GenerationParams::generator),
            assistant_params: self
                .assistant
                .params
                .clone()
                .unwrap_or_else(GenerationParams::assistant),
            mode: c.mode,
        }
    }
}

impl BackendSection {
    /// Instantiate the backend this section describes.
    pub fn build(&self, role: &str) -> Result<std::sync::Arc<dyn rollback_core::ModelBackend>> {
        match self.kind {
            BackendKind::Scripted => {
                let path = self
                    .rules
                    .as_ref()
                    .with_context(|| format!("{role}: scripted backend needs a rules file"))?;
                let json = std::fs::read_to_string(path)
                    .with_context(|| format!("{role}: reading {}", path.display()))?;
                let mut backend = ScriptedBackend::from_json(&json)
                    .with_context(|| format!("{role}: parsing {}", path.display()))?;
                if self.prob_less {
                    backend = backend.without_probabilities();
                }
                Ok(std::sync::Arc::new(backend))
            }
            BackendKind::Http => {
                let base_url = self
                    .base_url
                    .clone()
                    .or_else(|| std::env::var("OPENAI_BASE_URL").ok())
                    .with_context(|| format!("{role}: set base_url or $OPENAI_BASE_URL"))?;
                let model = self
                    .model
                    .clone()
                    .or_else(|| std::env::var("OPENAI_MODEL").ok())
                    .with_context(|| format!("{role}: set model or $OPENAI_MODEL"))?;
                let mut config = HttpBackendConfig::new(base_url, model);
                config.api_key = std::env::var(&self.api_key_env).ok();
                config.timeout = Duration::from_secs(self.timeout_secs);
                config.max_retries = self.max_retries;
                config.expects_probabilities = !self.prob_less;
                Ok(std::sync::Arc::new(HttpBackend::new(config)?))
            }
        }
    }
}
