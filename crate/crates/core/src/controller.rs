//! The episode loop: wait-gated assistant review, confidence-gated
//! feedback, rollback target arithmetic with clamping, reset-and-replay
//! restoration, a hard rollback budget, mistake memory, and the multi-trial
//! reflection wrapper.
//!
//! One episode runs strictly sequentially in one worker and owns its
//! environment instance; backends may be shared across workers when they
//! are internally synchronized.

use std::sync::OnceLock;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{GenerationParams, ModelBackend};
use crate::env::{is_think_action, Environment};
use crate::error::{ContractViolation, EpisodeError};
use crate::feedback::{accept_feedback, confidence_score, parse_feedback, Feedback};
use crate::trajectory::{
    render_generator_prompt, MistakeRecord, Mode, StepMeta, TaskInstance, Trajectory,
};
use crate::templates;

/// Version of the [`ControllerEvent`] stream schema.
pub const EVENT_SCHEMA_VERSION: u32 = 1;

/// Tunables for one episode. Defaults: threshold 0.93, wait-info k = 6,
/// rollback span bound 6, rollback budget 6, two trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Feedback confidence threshold; scores strictly below are discarded.
    pub theta: f64,
    /// The assistant stays locked until the trajectory holds this many steps.
    pub wait_info_k: usize,
    /// Upper bound on the rollback span (at least 1).
    pub max_rollback_span: usize,
    /// Hard budget of rollbacks per episode; 0 disables the assistant.
    pub max_rollback_attempts: usize,
    /// Trajectory length at which the generator stops.
    pub max_env_steps: usize,
    /// Episode attempts per task; reflection is synthesized between attempts.
    pub reflexion_trials: usize,
    pub generator_params: GenerationParams,
    pub assistant_params: GenerationParams,
    pub mode: Mode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            theta: 0.93,
            wait_info_k: 6,
            max_rollback_span: 6,
            max_rollback_attempts: 6,
            max_env_steps: 12,
            reflexion_trials: 2,
            generator_params: GenerationParams::generator(),
            assistant_params: GenerationParams::assistant(),
            mode: Mode::ActOnly,
        }
    }
}

/// Prompt material for one environment: generator few-shot exemplars, the
/// assistant template with its analysis examples, and the reflection
/// template used between trials.
#[derive(Debug, Clone, Default)]
pub struct PromptSet {
    pub generator_exemplars: String,
    pub assistant_template: String,
    pub assistant_examples: String,
    pub reflection_template: String,
}

impl PromptSet {
    pub fn game24() -> Self {
        Self {
            generator_exemplars: templates::GENERATOR_GAME24.to_string(),
            assistant_template: templates::ASSISTANT_GAME24.to_string(),
            assistant_examples: templates::EXAMPLES_GAME24.to_string(),
            reflection_template: templates::REFLECTION.to_string(),
        }
    }

    pub fn minishop() -> Self {
        Self {
            generator_exemplars: templates::GENERATOR_WEBSHOP.to_string(),
            assistant_template: templates::ASSISTANT_WEBSHOP.to_string(),
            assistant_examples: templates::EXAMPLES_WEBSHOP.to_string(),
            reflection_template: templates::REFLECTION.to_string(),
        }
    }

    /// Household-style defaults for remote environments; callers usually
    /// override the exemplars with task-specific ones.
    pub fn remote() -> Self {
        Self {
            generator_exemplars: String::new(),
            assistant_template: templates::ASSISTANT_ALFWORLD.to_string(),
            assistant_examples: templates::EXAMPLES_ALFWORLD.to_string(),
            reflection_template: templates::REFLECTION.to_string(),
        }
    }
}

/// One applied rollback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackEvent {
    /// Trajectory length when the error was flagged.
    pub detected_at: usize,
    /// The flagged step t.
    pub error_step: usize,
    /// n - t + 1.
    pub span_requested: usize,
    /// min(span_requested, max_rollback_span).
    pub span_applied: usize,
    /// detected_at - span_applied.
    pub target_len: usize,
    pub feedback: Feedback,
}

/// Why feedback changed nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    BelowThreshold,
    NoLocation,
}

/// Structured event stream consumed by the harness logger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerEvent {
    Step {
        index: usize,
        action: String,
        observation: String,
        valid_action: bool,
        is_think: bool,
    },
    AssistantAnalysis {
        at_len: usize,
        confidence: Option<f64>,
        accepted: bool,
    },
    Discard {
        at_len: usize,
        reason: DiscardReason,
    },
    Rollback {
        detected_at: usize,
        error_step: usize,
        span_applied: usize,
        target_len: usize,
    },
    Done {
        success: bool,
        reward: f64,
    },
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub reward: f64,
    pub final_trajectory: Trajectory,
    pub rollbacks: Vec<RollbackEvent>,
    /// Feedback discarded by the confidence gate.
    pub discarded_feedback_count: usize,
    /// Every assistant confidence observed, regardless of gating.
    pub confidence_samples: Vec<f64>,
    pub total_gen_tokens: u64,
    pub total_assist_tokens: u64,
    pub wall_time_ms: u64,
    pub trial_index: usize,
    /// Error tag when the episode failed unrecoverably.
    pub error: Option<String>,
    /// Actions executed by the generator (excludes replays).
    pub generator_steps: u64,
    /// Actions re-executed during rollback restoration.
    pub replayed_steps: u64,
    pub events: Vec<ControllerEvent>,
}

impl EpisodeResult {
    /// Per-step generation latencies, in trajectory order.
    pub fn step_latencies_ms(&self) -> Vec<u64> {
        self.final_trajectory
            .steps
            .iter()
            .map(|s| s.latency_ms)
            .collect()
    }

    /// Copy with every wall-clock measurement zeroed. Loggers keep the real
    /// timings in a separate field so determinism comparisons can exclude
    /// them wholesale.
    pub fn with_zeroed_timing(&self) -> EpisodeResult {
        let mut result = self.clone();
        result.wall_time_ms = 0;
        for step in &mut result.final_trajectory.steps {
            step.latency_ms = 0;
        }
        result
    }
}

/// Rollback span and surviving prefix length for an error flagged at step
/// `t` of an `n`-step trajectory: span = min(n - t + 1, n_bar), target_len
/// = n - span.
pub fn compute_rollback_target(
    n: usize,
    t: usize,
    n_bar: usize,
) -> Result<(usize, usize), ContractViolation> {
    if t < 1 || t > n {
        return Err(ContractViolation(format!(
            "error step {t} outside 1..={n}"
        )));
    }
    if n_bar < 1 {
        return Err(ContractViolation("rollback span bound must be >= 1".into()));
    }
    let span = (n - t + 1).min(n_bar);
    Ok((span, n - span))
}

/// True when the assistant may analyze a trajectory of length `traj_len`.
/// A rollback that drops the length below `k` relocks the assistant until
/// the generator has built the trajectory back up.
pub fn assistant_unlocked(traj_len: usize, k: usize) -> bool {
    traj_len >= k
}

/// Reset the environment and replay the first `m` recorded actions,
/// checking each replayed observation byte-for-byte against the recording.
/// Returns the number of replayed actions.
pub fn restore_environment<E: Environment + ?Sized>(
    env: &mut E,
    traj: &Trajectory,
    target_len: usize,
) -> Result<u64, EpisodeError> {
    let actions = traj.action_prefix(target_len)?;
    let initial = env.reset(&traj.task.env_config)?;
    if initial != traj.initial_observation {
        return Err(EpisodeError::ReplayDivergence {
            step: 0,
            recorded: traj.initial_observation.clone(),
            replayed: initial,
        });
    }
    for (i, action) in actions.iter().enumerate() {
        let obs = env.step(action)?;
        let recorded = &traj.steps[i].observation;
        if obs.text != *recorded {
            return Err(EpisodeError::ReplayDivergence {
                step: i + 1,
                recorded: recorded.clone(),
                replayed: obs.text,
            });
        }
    }
    Ok(actions.len() as u64)
}

fn action_label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^action[ \t]*\d*[ \t]*:[ \t]*").unwrap())
}

/// First non-empty line of the generation, with a leading `Action i:`
/// label stripped if the model echoed one.
fn normalize_action(text: &str) -> String {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    action_label_regex().replace(line, "").trim().to_string()
}

/// Runs episodes for one task against one environment instance.
pub struct EpisodeRunner<'a> {
    pub env: &'a mut dyn Environment,
    pub generator: &'a dyn ModelBackend,
    pub assistant: &'a dyn ModelBackend,
    pub config: &'a ControllerConfig,
    pub prompts: &'a PromptSet,
}

impl EpisodeRunner<'_> {
    /// One episode. Refuses to start when rollback is enabled against a
    /// non-deterministic environment or the environment rejects the task
    /// config; failures during the run are folded into the result's error
    /// tag instead.
    pub fn run_episode(&mut self, task: &TaskInstance) -> Result<EpisodeResult, EpisodeError> {
        self.run_trial(task, &[], 0, 0)
    }

    /// Sequential trials with early stop on success. After each failed
    /// trial the assistant writes a reflection over the failed trajectory,
    /// which is prepended to the next trial's generator prompts. Mistake
    /// memory and the rollback budget reset per trial.
    pub fn run_trials(&mut self, task: &TaskInstance) -> Result<Vec<EpisodeResult>, EpisodeError> {
        let mut results = Vec::new();
        let mut reflections: Vec<String> = Vec::new();
        let mut carried_assist_tokens = 0u64;
        for trial in 0..self.config.reflexion_trials.max(1) {
            let result = self.run_trial(task, &reflections, trial, carried_assist_tokens)?;
            carried_assist_tokens = 0;
            let succeeded = result.success;
            let failed_block = result.final_trajectory.render_block();
            results.push(result);
            if succeeded {
                break;
            }
            if trial + 1 < self.config.reflexion_trials {
                let prompt = self
                    .prompts
                    .reflection_template
                    .replace("{trajectory}", &failed_block);
                match self.assistant.complete(&prompt, &self.config.assistant_params) {
                    Ok(output) => {
                        carried_assist_tokens = output.prompt_tokens + output.completion_tokens;
                        reflections.push(output.text);
                    }
                    Err(e) => {
                        log::warn!("reflection request failed, continuing without it: {e}");
                    }
                }
            }
        }
        Ok(results)
    }

    fn generator_prompt(
        &self,
        reflections: &[String],
        traj: &Trajectory,
        feedback: Option<&str>,
        mistakes: &[MistakeRecord],
    ) -> String {
        let base = render_generator_prompt(
            traj,
            &self.prompts.generator_exemplars,
            feedback,
            mistakes,
            self.config.mode,
        );
        if reflections.is_empty() {
            return base;
        }
        let mut out = String::from("Reflections from your earlier failed attempts at this task:\n");
        for reflection in reflections {
            out.push_str(&format!("- {}\n", reflection.trim()));
        }
        out.push('\n');
        out.push_str(&base);
        out
    }

    fn run_trial(
        &mut self,
        task: &TaskInstance,
        reflections: &[String],
        trial_index: usize,
        carried_assist_tokens: u64,
    ) -> Result<EpisodeResult, EpisodeError> {
        if self.config.max_rollback_attempts > 0 && !self.env.is_deterministic() {
            return Err(EpisodeError::NonDeterministicEnv);
        }
        let started = Instant::now();
        let initial = self.env.reset(&task.env_config)?;
        let mut traj = Trajectory::new(task.clone(), initial);

        let mut mistakes: Vec<MistakeRecord> = Vec::new();
        let mut pending_feedback: Option<String> = None;
        let mut rollbacks: Vec<RollbackEvent> = Vec::new();
        let mut events: Vec<ControllerEvent> = Vec::new();
        let mut confidence_samples: Vec<f64> = Vec::new();
        let mut discarded_feedback_count = 0usize;
        let mut total_gen_tokens = 0u64;
        let mut total_assist_tokens = carried_assist_tokens;
        let mut generator_steps = 0u64;
        let mut replayed_steps = 0u64;
        let mut success = false;
        let mut reward = 0.0f64;
        let mut error: Option<String> = None;
        let mut warned_probless = false;

        while traj.len() < self.config.max_env_steps {
            // 1. The generator proposes the next action; accepted feedback
            // is shown exactly once, then lives on in mistake memory.
            let prompt =
                self.generator_prompt(reflections, &traj, pending_feedback.as_deref(), &mistakes);
            pending_feedback = None;
            let gen_started = Instant::now();
            let generation = match self.generator.complete(&prompt, &self.config.generator_params)
            {
                Ok(output) => output,
                Err(e) => {
                    error = Some(format!("generator: {e}"));
                    break;
                }
            };
            total_gen_tokens += generation.prompt_tokens + generation.completion_tokens;
            let action = normalize_action(&generation.text);
            if action.is_empty() {
                error = Some("generator returned an empty action".into());
                break;
            }

            // 2. The environment executes and the step is appended.
            let observation = match self.env.step(&action) {
                Ok(obs) => obs,
                Err(e) => {
                    error = Some(format!("environment: {e}"));
                    break;
                }
            };
            generator_steps += 1;
            let meta = StepMeta {
                is_think: is_think_action(&action),
                gen_tokens: generation.completion_tokens,
                latency_ms: gen_started.elapsed().as_millis() as u64,
            };
            traj.append_step(action.clone(), observation.text.clone(), meta);
            events.push(ControllerEvent::Step {
                index: traj.len(),
                action,
                observation: observation.text.clone(),
                valid_action: observation.valid_action,
                is_think: meta.is_think,
            });
            if observation.done {
                reward = observation.reward;
                success = observation.reward == 1.0;
                break;
            }

            // 3. Assistant review, gated by wait-info and the budget.
            if rollbacks.len() >= self.config.max_rollback_attempts
                || !assistant_unlocked(traj.len(), self.config.wait_info_k)
            {
                continue;
            }
            let assist_prompt = templates::fill(
                &self.prompts.assistant_template,
                &self.prompts.assistant_examples,
                &traj.render_block(),
            );
            let analysis = match self
                .assistant
                .complete(&assist_prompt, &self.config.assistant_params)
            {
                Ok(output) => output,
                Err(e) => {
                    error = Some(format!("assistant: {e}"));
                    break;
                }
            };
            total_assist_tokens += analysis.prompt_tokens + analysis.completion_tokens;

            let (accepted, confidence) = if analysis.token_probs.is_empty() {
                if self.assistant.reports_probabilities() {
                    error = Some("assistant returned no token probabilities".into());
                    break;
                }
                if !warned_probless {
                    log::warn!(
                        "assistant backend cannot report token probabilities; \
                         feedback gating is disabled and every feedback is accepted"
                    );
                    warned_probless = true;
                }
                (true, None)
            } else {
                let score = confidence_score(&analysis.token_probs)
                    .expect("non-empty probability list");
                confidence_samples.push(score);
                (accept_feedback(score, self.config.theta), Some(score))
            };
            events.push(ControllerEvent::AssistantAnalysis {
                at_len: traj.len(),
                confidence,
                accepted,
            });

            if !accepted {
                discarded_feedback_count += 1;
                events.push(ControllerEvent::Discard {
                    at_len: traj.len(),
                    reason: DiscardReason::BelowThreshold,
                });
                continue;
            }

            let mut feedback = parse_feedback(&analysis.text, traj.len());
            feedback.confidence = confidence.unwrap_or(1.0);
            let Some(error_step) = feedback.error_step else {
                // Accepted but location-free: treated as noise, neither
                // forwarded nor able to trigger a rollback.
                events.push(ControllerEvent::Discard {
                    at_len: traj.len(),
                    reason: DiscardReason::NoLocation,
                });
                continue;
            };

            let detected_at = traj.len();
            let (span_applied, target_len) =
                compute_rollback_target(detected_at, error_step, self.config.max_rollback_span)?;
            let truncated = traj
                .truncate_to(target_len)
                .expect("target_len <= trajectory length");
            match restore_environment(self.env, &traj, target_len) {
                Ok(replayed) => replayed_steps += replayed,
                Err(e) => {
                    error = Some(format!("rollback restoration: {e}"));
                    break;
                }
            }
            mistakes.push(MistakeRecord {
                at_step: error_step,
                feedback_excerpt: feedback.explanation.clone(),
            });
            pending_feedback = Some(analysis.text.clone());
            events.push(ControllerEvent::Rollback {
                detected_at,
                error_step,
                span_applied,
                target_len,
            });
            rollbacks.push(RollbackEvent {
                detected_at,
                error_step,
                span_requested: detected_at - error_step + 1,
                span_applied,
                target_len,
                feedback,
            });
            traj = truncated;
        }

        if error.is_some() {
            success = false;
        }
        events.push(ControllerEvent::Done { success, reward });
        Ok(EpisodeResult {
            success,
            reward,
            final_trajectory: traj,
            rollbacks,
            discarded_feedback_count,
            confidence_samples,
            total_gen_tokens,
            total_assist_tokens,
            wall_time_ms: started.elapsed().as_millis() as u64,
            trial_index,
            error,
            generator_steps,
            replayed_steps,
            events,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedRule};
    use crate::env::Game24Env;

    fn rule(pattern: &str, reply: &str, probs: &[f64]) -> ScriptedRule {
        ScriptedRule {
            pattern: pattern.into(),
            reply: reply.into(),
            probs: probs.to_vec(),
        }
    }

    fn game24_task() -> TaskInstance {
        TaskInstance {
            id: "fixture".into(),
            description: "Use the four input numbers and +, -, *, / to reach exactly 24.".into(),
            env_name: "game24".into(),
            env_config: serde_json::json!({"numbers": [1, 2, 10, 13]}),
        }
    }

    /// Bare prompts so scripted-rule patterns only ever match the live
    /// trajectory, never exemplar text.
    fn test_prompts() -> PromptSet {
        PromptSet {
            generator_exemplars: String::new(),
            assistant_template: "Analyze:\n{examples}{trajectory}".into(),
            assistant_examples: String::new(),
            reflection_template: "Reflect on:\n{trajectory}\nReflection:".into(),
        }
    }

    #[test]
    fn rollback_target_hand_cases() {
        assert_eq!(compute_rollback_target(7, 5, 6).unwrap(), (3, 4));
        assert_eq!(compute_rollback_target(10, 1, 6).unwrap(), (6, 4));
        assert_eq!(compute_rollback_target(3, 3, 6).unwrap(), (1, 2));
        assert!(compute_rollback_target(3, 4, 6).is_err());
        assert!(compute_rollback_target(3, 0, 6).is_err());
        assert!(compute_rollback_target(3, 2, 0).is_err());
    }

    #[test]
    fn unlock_rule() {
        assert!(!assistant_unlocked(5, 6));
        assert!(assistant_unlocked(6, 6));
        // After a rollback from 7 to 3, lengths 3..=5 stay locked.
        for len in 3..6 {
            assert!(!assistant_unlocked(len, 6));
        }
        assert!(assistant_unlocked(6, 6));
    }

    #[test]
    fn restore_replays_the_prefix_and_checks_bytes() {
        let mut env = Game24Env::new();
        let task = game24_task();
        let initial = env.reset(&task.env_config).unwrap();
        let mut traj = Trajectory::new(task, initial);
        let obs = env.step("13 - 10 = 3").unwrap();
        traj.append_step("13 - 10 = 3", obs.text, StepMeta::default());
        let obs = env.step("3 * 2 = 6").unwrap();
        traj.append_step("3 * 2 = 6", obs.text, StepMeta::default());

        let replayed = restore_environment(&mut env, &traj, 1).unwrap();
        assert_eq!(replayed, 1);
        let obs = env.step("3 * 2 = 6").unwrap();
        assert_eq!(obs.text, "numbers left: 1 6");

        // A corrupted recording is caught and names the divergent step.
        traj.steps[0].observation = "numbers left: 9 9 9".into();
        let err = restore_environment(&mut env, &traj, 2).unwrap_err();
        match err {
            EpisodeError::ReplayDivergence { step, .. } => assert_eq!(step, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn restore_with_zero_target_is_a_fresh_reset() {
        let mut env = Game24Env::new();
        let task = game24_task();
        let initial = env.reset(&task.env_config).unwrap();
        let mut traj = Trajectory::new(task, initial);
        let obs = env.step("13 - 10 = 3").unwrap();
        traj.append_step("13 - 10 = 3", obs.text, StepMeta::default());

        let replayed = restore_environment(&mut env, &traj, 0).unwrap();
        assert_eq!(replayed, 0);
        let obs = env.step("13 - 10 = 3").unwrap();
        assert_eq!(obs.text, "numbers left: 1 2 3");
    }

    #[test]
    fn normalize_action_strips_labels_and_extra_lines() {
        assert_eq!(normalize_action("13 - 10 = 3"), "13 - 10 = 3");
        assert_eq!(normalize_action("Action 4: take mug 1\nextra"), "take mug 1");
        assert_eq!(normalize_action("\n  Action: go north  \n"), "go north");
        assert_eq!(normalize_action("  \n\n"), "");
    }

    #[test]
    fn successful_episode_without_assistant() {
        let generator = ScriptedBackend::new(vec![
            rule("Observation 3: numbers left: 24", "answer: ((13 - 1) + 2) + 10 = 24", &[]),
            rule("Observation 2: numbers left: 10 14", "14 + 10 = 24", &[]),
            rule("Observation 1: numbers left: 2 10 12", "12 + 2 = 14", &[]),
            rule("", "13 - 1 = 12", &[]),
        ]);
        let assistant = ScriptedBackend::new(vec![rule("", "unused", &[0.99])]);
        let config = ControllerConfig {
            max_rollback_attempts: 0,
            ..ControllerConfig::default()
        };
        let prompts = test_prompts();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let result = runner.run_episode(&game24_task()).unwrap();
        assert!(result.success);
        assert_eq!(result.reward, 1.0);
        assert_eq!(result.final_trajectory.len(), 4);
        assert_eq!(assistant.call_count(), 0);
        assert_eq!(result.generator_steps, 4);
        assert_eq!(result.replayed_steps, 0);
    }

    #[test]
    fn rollback_reshapes_the_trajectory() {
        // Wrong step 3 gets flagged confidently; the post-feedback rule fixes it.
        let generator = ScriptedBackend::new(vec![
            rule("Feedback on your previous actions", "14 + 10 = 24", &[]),
            rule("Observation 3: numbers left: 24", "answer: ((13 - 1) + 2) + 10 = 24", &[]),
            rule("Observation 3: numbers left: 140", "think[stuck]", &[]),
            rule("Observation 2: numbers left: 10 14", "14 * 10 = 140", &[]),
            rule("Observation 1: numbers left: 2 10 12", "12 + 2 = 14", &[]),
            rule("", "13 - 1 = 12", &[]),
        ]);
        let assistant = ScriptedBackend::new(vec![
            rule(
                "Action 3: 14 * 10 = 140",
                "### Conclusion\nError Location: Action 3\nExplanation: 140 is a dead end; add 10 to 14 instead.",
                &[0.95, 0.95],
            ),
            rule("", "No errors found so far.", &[0.95, 0.95]),
        ]);
        let config = ControllerConfig {
            wait_info_k: 0,
            ..ControllerConfig::default()
        };
        let prompts = test_prompts();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let result = runner.run_episode(&game24_task()).unwrap();
        assert!(result.success, "error: {:?}", result.error);
        assert_eq!(result.rollbacks.len(), 1);
        let rollback = &result.rollbacks[0];
        assert_eq!(rollback.detected_at, 3);
        assert_eq!(rollback.error_step, 3);
        assert_eq!(rollback.span_applied, 1);
        assert_eq!(rollback.target_len, 2);
        assert_eq!(result.replayed_steps, 2);
        // The corrected step replaced the bad one.
        assert_eq!(result.final_trajectory.steps[2].action, "14 + 10 = 24");
        // The mistake memory reached the generator after the rollback.
        assert!(generator
            .calls()
            .iter()
            .any(|p| p.contains("mistakes made earlier")));
    }

    #[test]
    fn low_confidence_feedback_is_discarded() {
        let generator = ScriptedBackend::new(vec![
            rule("Observation 2: numbers left: 10 14", "14 * 10 = 140", &[]),
            rule("Observation 1: numbers left: 2 10 12", "12 + 2 = 14", &[]),
            rule("Observation 3", "1 + 1 = 2", &[]),
            rule("", "13 - 1 = 12", &[]),
        ]);
        let assistant = ScriptedBackend::new(vec![rule(
            "",
            "Error Location: Action 3\nExplanation: bad.",
            &[0.90, 0.90],
        )]);
        let config = ControllerConfig {
            wait_info_k: 0,
            max_env_steps: 5,
            ..ControllerConfig::default()
        };
        let prompts = test_prompts();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let result = runner.run_episode(&game24_task()).unwrap();
        assert!(!result.success);
        assert!(result.rollbacks.is_empty());
        assert!(result.discarded_feedback_count > 0);
        assert!(result
            .confidence_samples
            .iter()
            .all(|s| (s - 0.90).abs() < 1e-12));
    }

    #[test]
    fn budget_zero_never_consults_the_assistant() {
        let generator = ScriptedBackend::new(vec![rule("", "1 - 1 = 0", &[])]);
        let assistant = ScriptedBackend::new(vec![rule("", "unused", &[0.99])]);
        let config = ControllerConfig {
            wait_info_k: 0,
            max_rollback_attempts: 0,
            max_env_steps: 4,
            ..ControllerConfig::default()
        };
        let prompts = test_prompts();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let result = runner.run_episode(&game24_task()).unwrap();
        assert_eq!(assistant.call_count(), 0);
        assert_eq!(result.final_trajectory.len(), 4);
    }

    #[test]
    fn impossible_threshold_matches_act_only_except_token_spend() {
        let make_generator = || {
            ScriptedBackend::new(vec![
                rule("Observation 2: numbers left: 10 14", "14 * 10 = 140", &[]),
                rule("Observation 1: numbers left: 2 10 12", "12 + 2 = 14", &[]),
                rule("Observation 3", "1 + 1 = 2", &[]),
                rule("", "13 - 1 = 12", &[]),
            ])
        };
        let assistant = ScriptedBackend::new(vec![rule(
            "",
            "Error Location: Action 1\nExplanation: everything is wrong.",
            &[0.99],
        )]);
        let prompts = test_prompts();

        let gated_config = ControllerConfig {
            wait_info_k: 0,
            theta: 1.0 + f64::EPSILON,
            max_env_steps: 5,
            ..ControllerConfig::default()
        };
        let generator = make_generator();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &gated_config,
            prompts: &prompts,
        };
        let gated = runner.run_episode(&game24_task()).unwrap();

        let act_only_config = ControllerConfig {
            wait_info_k: 0,
            max_rollback_attempts: 0,
            max_env_steps: 5,
            ..ControllerConfig::default()
        };
        let generator = make_generator();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &act_only_config,
            prompts: &prompts,
        };
        let act_only = runner.run_episode(&game24_task()).unwrap();

        assert_eq!(
            gated.with_zeroed_timing().final_trajectory,
            act_only.with_zeroed_timing().final_trajectory
        );
        assert_eq!(gated.rollbacks.len(), 0);
        assert!(gated.total_assist_tokens > 0);
        assert_eq!(act_only.total_assist_tokens, 0);
    }

    #[test]
    fn budget_caps_an_adversarial_assistant() {
        let generator = ScriptedBackend::new(vec![rule("", "13 - 1 = 12", &[])]);
        let assistant = ScriptedBackend::new(vec![rule(
            "",
            "### Conclusion\nError Location: Action 1\nExplanation: always wrong.",
            &[0.99, 0.99],
        )]);
        let config = ControllerConfig {
            wait_info_k: 0,
            max_env_steps: 12,
            ..ControllerConfig::default()
        };
        let prompts = test_prompts();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let result = runner.run_episode(&game24_task()).unwrap();
        assert_eq!(result.rollbacks.len(), 6);
        assert!(!result.success);
        // After the budget is exhausted the assistant is never consulted again.
        assert_eq!(assistant.call_count(), 6);
        // Work bound: generator executions <= max_env_steps + total span.
        let total_span: usize = result.rollbacks.iter().map(|r| r.span_applied).sum();
        assert!(result.generator_steps as usize <= config.max_env_steps + total_span);
    }

    #[test]
    fn trials_stop_early_on_success_and_inject_reflections() {
        let generator = ScriptedBackend::new(vec![
            rule(
                "Reflections from your earlier failed attempts",
                "answer: (13 - 1) + 2 + 10 = 24",
                &[],
            ),
            rule("", "answer: 1 + 1 = 2", &[]),
        ]);
        let assistant = ScriptedBackend::new(vec![
            rule("Reflection:", "Next time submit the full expression over all four numbers.", &[0.9]),
            rule("", "No errors found.", &[0.99]),
        ]);
        let config = ControllerConfig::default();
        let prompts = test_prompts();
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let results = runner.run_trials(&game24_task()).unwrap();
        assert_eq!(results.len(), 2);
        assert!(!results[0].success);
        assert!(results[1].success);
        assert_eq!(results[1].trial_index, 1);
        assert!(generator.calls().iter().any(|p| p
            .contains("Reflections from your earlier failed attempts at this task:\n- Next time")));

        // A first-trial success produces exactly one result.
        let generator = ScriptedBackend::new(vec![rule("", "answer: (13 - 1) + 2 + 10 = 24", &[])]);
        let mut env = Game24Env::new();
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let results = runner.run_trials(&game24_task()).unwrap();
        assert_eq!(results.len(), 1);
        assert!(results[0].success);
    }

    struct NonDetEnv;

    impl Environment for NonDetEnv {
        fn reset(&mut self, _config: &serde_json::Value) -> Result<String, crate::EnvError> {
            Ok("o0".into())
        }

        fn step(&mut self, _action: &str) -> Result<crate::EnvObservation, crate::EnvError> {
            Ok(crate::EnvObservation::ongoing("x"))
        }

        fn is_deterministic(&self) -> bool {
            false
        }
    }

    #[test]
    fn non_deterministic_env_refuses_rollback() {
        let generator = ScriptedBackend::new(vec![rule("", "a", &[])]);
        let assistant = ScriptedBackend::new(vec![rule("", "b", &[0.9])]);
        let config = ControllerConfig::default();
        let prompts = PromptSet::remote();
        let mut env = NonDetEnv;
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        let err = runner.run_episode(&game24_task()).unwrap_err();
        assert!(matches!(err, EpisodeError::NonDeterministicEnv));

        // With the budget at zero the same environment is allowed.
        let config = ControllerConfig {
            max_rollback_attempts: 0,
            max_env_steps: 2,
            ..ControllerConfig::default()
        };
        let mut env = NonDetEnv;
        let mut runner = EpisodeRunner {
            env: &mut env,
            generator: &generator,
            assistant: &assistant,
            config: &config,
            prompts: &prompts,
        };
        assert!(runner.run_episode(&game24_task()).is_ok());
    }
}
