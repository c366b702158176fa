//! Trajectory data model and prompt rendering.
//!
//! A trajectory is the task description, the initial observation, and the
//! alternating action/observation steps taken so far. Steps are 1-based to
//! match the `Action 1` / `Observation 1` labeling used in prompts; the
//! initial observation is stored separately, not as a step.

use serde::{Deserialize, Serialize};

use crate::error::ContractViolation;

/// Prompting style for the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Emit environment actions only.
    #[default]
    ActOnly,
    /// Interleave `think[...]` pseudo-actions with environment actions.
    React,
}

/// One task to solve, with the environment-specific payload needed to reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    /// The task instruction handed to the generator.
    pub description: String,
    pub env_name: String,
    /// Opaque payload passed to `Environment::reset`.
    pub env_config: serde_json::Value,
}

/// Per-step metadata that is not part of the action/observation pair itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMeta {
    pub is_think: bool,
    pub gen_tokens: u64,
    pub latency_ms: u64,
}

/// One executed action and the observation it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position within the trajectory.
    pub index: usize,
    pub action: String,
    pub observation: String,
    pub is_think: bool,
    pub gen_tokens: u64,
    pub latency_ms: u64,
}

/// A record of a rolled-back mistake, injected into later generator prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeRecord {
    pub at_step: usize,
    pub feedback_excerpt: String,
}

/// Task description, initial observation, and the executed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskInstance,
    pub initial_observation: String,
    pub steps: Vec<Step>,
}

/// At most this many mistake records are rendered into a prompt, newest last.
pub const MISTAKE_MEMORY_LIMIT: usize = 6;

impl Trajectory {
    pub fn new(task: TaskInstance, initial_observation: impl Into<String>) -> Self {
        Self {
            task,
            initial_observation: initial_observation.into(),
            steps: Vec::new(),
        }
    }

    /// Number of executed steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Append an action/observation pair; the new step index is `len() + 1`.
    pub fn append_step(
        &mut self,
        action: impl Into<String>,
        observation: impl Into<String>,
        meta: StepMeta,
    ) {
        self.steps.push(Step {
            index: self.steps.len() + 1,
            action: action.into(),
            observation: observation.into(),
            is_think: meta.is_think,
            gen_tokens: meta.gen_tokens,
            latency_ms: meta.latency_ms,
        });
    }

    /// A copy holding only the first `m` steps; `m = 0` keeps just the task
    /// description and the initial observation.
    pub fn truncate_to(&self, m: usize) -> Result<Trajectory, ContractViolation> {
        if m > self.steps.len() {
            return Err(ContractViolation(format!(
                "truncate_to({m}) on a trajectory of length {}",
                self.steps.len()
            )));
        }
        Ok(Trajectory {
            task: self.task.clone(),
            initial_observation: self.initial_observation.clone(),
            steps: self.steps[..m].to_vec(),
        })
    }

    /// Actions of steps `1..=m`, in order. Think-actions are included; they
    /// are replayed too so the prompt context survives a rollback, and
    /// environments answer them with a constant observation.
    pub fn action_prefix(&self, m: usize) -> Result<Vec<String>, ContractViolation> {
        if m > self.steps.len() {
            return Err(ContractViolation(format!(
                "action_prefix({m}) on a trajectory of length {}",
                self.steps.len()
            )));
        }
        Ok(self.steps[..m].iter().map(|s| s.action.clone()).collect())
    }

    /// The `Observation 0 / Action i / Observation i` block used when the
    /// trajectory is shown to the assistant.
    pub fn render_block(&self) -> String {
        let mut out = String::new();
        out.push_str("Observation 0:\n");
        out.push_str(&self.initial_observation);
        out.push('\n');
        for step in &self.steps {
            out.push_str(&format!("Action {}: {}\n", step.index, step.action));
            out.push_str(&format!("Observation {}: {}\n", step.index, step.observation));
        }
        out
    }
}

/// Render the generator prompt. Deterministic: identical inputs produce
/// identical bytes. Section order is exemplars, mistake memory, task
/// description, initial observation, steps, then the latest accepted
/// feedback as a delimited block, ending with the cue for the next action.
pub fn render_generator_prompt(
    traj: &Trajectory,
    exemplars: &str,
    feedback: Option<&str>,
    mistakes: &[MistakeRecord],
    mode: Mode,
) -> String {
    let mut out = String::new();
    if !exemplars.is_empty() {
        out.push_str(exemplars.trim_end());
        out.push_str("\n\n");
    }
    if mode == Mode::React {
        out.push_str(
            "You may use think[...] to reason about the task; the environment answers every thought with \"OK.\" and its state does not change.\n\n",
        );
    }
    if !mistakes.is_empty() {
        out.push_str("Here are mistakes made earlier in this task. Avoid repeating them:\n");
        let skip = mistakes.len().saturating_sub(MISTAKE_MEMORY_LIMIT);
        for record in &mistakes[skip..] {
            out.push_str(&format!(
                "- (Action {}) {}\n",
                record.at_step, record.feedback_excerpt
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!("Task: {}\n", traj.task.description));
    out.push_str(&format!("Observation 0: {}\n", traj.initial_observation));
    for step in &traj.steps {
        out.push_str(&format!("Action {}: {}\n", step.index, step.action));
        out.push_str(&format!("Observation {}: {}\n", step.index, step.observation));
    }
    if let Some(feedback) = feedback {
        out.push_str("\nFeedback on your previous actions:\n");
        out.push_str(feedback.trim_end());
        out.push_str("\nEnd of feedback.\n");
    }
    out.push_str(&format!("Action {}:", traj.len() + 1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskInstance {
        TaskInstance {
            id: "t0".into(),
            description: "Use the four input numbers and +, -, *, / to reach exactly 24.".into(),
            env_name: "game24".into(),
            env_config: serde_json::json!({"numbers": [1, 2, 10, 13]}),
        }
    }

    #[test]
    fn append_assigns_contiguous_indices() {
        let mut traj = Trajectory::new(task(), "# Here is the task:\nInput: 1 2 10 13");
        traj.append_step("13 - 10 = 3", "numbers left: 1 2 3", StepMeta::default());
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.steps[0].index, 1);

        for i in 2..=6 {
            traj.append_step(format!("a{i}"), format!("o{i}"), StepMeta::default());
        }
        assert_eq!(traj.len(), 6);
        assert_eq!(traj.steps.last().unwrap().index, 6);

        let actions: Vec<&str> = traj.steps.iter().map(|s| s.action.as_str()).collect();
        assert_eq!(actions[..3], ["13 - 10 = 3", "a2", "a3"]);
    }

    #[test]
    fn truncate_keeps_prefix_and_is_idempotent() {
        let mut traj = Trajectory::new(task(), "o0");
        for i in 1..=5 {
            traj.append_step(format!("a{i}"), format!("o{i}"), StepMeta::default());
        }
        let two = traj.truncate_to(2).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.steps[1].action, "a2");
        assert_eq!(two.truncate_to(2).unwrap(), two);

        let zero = traj.truncate_to(0).unwrap();
        assert!(zero.is_empty());
        assert_eq!(zero.initial_observation, "o0");

        assert_eq!(traj.truncate_to(5).unwrap(), traj);
        assert!(traj.truncate_to(6).is_err());
    }

    #[test]
    fn action_prefix_matches_truncation() {
        let mut traj = Trajectory::new(task(), "o0");
        for i in 1..=3 {
            traj.append_step(format!("a{i}"), format!("o{i}"), StepMeta::default());
        }
        assert!(traj.action_prefix(0).unwrap().is_empty());
        assert_eq!(traj.action_prefix(2).unwrap(), vec!["a1", "a2"]);
        for m in 0..=3 {
            let prefix = traj.action_prefix(m).unwrap();
            let truncated = traj.truncate_to(m).unwrap();
            let from_truncated: Vec<String> =
                truncated.steps.iter().map(|s| s.action.clone()).collect();
            assert_eq!(prefix, from_truncated);
        }
    }

    #[test]
    fn prompt_is_deterministic_and_omits_empty_sections() {
        let mut traj = Trajectory::new(task(), "# Here is the task:\nInput: 1 2 10 13");
        traj.append_step("13 - 10 = 3", "numbers left: 1 2 3", StepMeta::default());

        let a = render_generator_prompt(&traj, "", None, &[], Mode::ActOnly);
        let b = render_generator_prompt(&traj, "", None, &[], Mode::ActOnly);
        assert_eq!(a, b);
        assert!(!a.contains("Feedback on your previous actions"));
        assert!(!a.contains("mistakes made earlier"));
        assert!(a.ends_with("Action 2:"));
    }

    #[test]
    fn prompt_sections_render_in_order() {
        let mut traj = Trajectory::new(task(), "o0");
        traj.append_step("a1", "o1", StepMeta::default());
        let mistakes = vec![MistakeRecord {
            at_step: 1,
            feedback_excerpt: "went left instead of right".into(),
        }];
        let prompt =
            render_generator_prompt(&traj, "EXEMPLARS", Some("fix it"), &mistakes, Mode::React);
        let exemplars_at = prompt.find("EXEMPLARS").unwrap();
        let think_at = prompt.find("think[...]").unwrap();
        let mistakes_at = prompt.find("mistakes made earlier").unwrap();
        let task_at = prompt.find("Task: ").unwrap();
        let feedback_at = prompt.find("Feedback on your previous actions").unwrap();
        assert!(exemplars_at < think_at);
        assert!(think_at < mistakes_at);
        assert!(mistakes_at < task_at);
        assert!(task_at < feedback_at);
        assert!(prompt.ends_with("Action 2:"));
    }

    #[test]
    fn mistake_memory_renders_at_most_six_newest() {
        let traj = Trajectory::new(task(), "o0");
        let mistakes: Vec<MistakeRecord> = (1..=8)
            .map(|i| MistakeRecord {
                at_step: i,
                feedback_excerpt: format!("mistake {i}"),
            })
            .collect();
        let prompt = render_generator_prompt(&traj, "", None, &mistakes, Mode::ActOnly);
        assert!(!prompt.contains("mistake 1"));
        assert!(!prompt.contains("mistake 2"));
        for i in 3..=8 {
            assert!(prompt.contains(&format!("mistake {i}")));
        }
    }

    #[test]
    fn serializes_to_task_initial_observation_steps() {
        let mut traj = Trajectory::new(task(), "o0");
        traj.append_step("a1", "o1", StepMeta::default());
        let value = serde_json::to_value(&traj).unwrap();
        assert!(value.get("task").is_some());
        assert!(value.get("initial_observation").is_some());
        assert_eq!(value["steps"].as_array().unwrap().len(), 1);
        let back: Trajectory = serde_json::from_value(value).unwrap();
        assert_eq!(back, traj);
    }
}
