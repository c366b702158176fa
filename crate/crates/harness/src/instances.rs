//! Task instance files and the seeded 24-game instance generator.

use std::path::Path;

use anyhow::{bail, Context, Result};
use num_rational::Ratio;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rollback_core::env::brute_force_24;
use rollback_core::env::ShoppingGoal;
use rollback_core::TaskInstance;

use crate::config::EnvKind;

/// Instruction shown to the generator for every 24-game task.
pub const GAME24_DESCRIPTION: &str =
    "Use the four input numbers and +, -, *, / to reach exactly 24.";

/// One line of a 24-game instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game24Instance {
    pub id: String,
    pub numbers: [i64; 4],
}

/// One line of a remote-environment instance file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteInstance {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub config: serde_json::Value,
}

/// Load instances for the given environment kind from a JSONL file.
pub fn load_instances(kind: EnvKind, path: &Path) -> Result<Vec<TaskInstance>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading instances {}", path.display()))?;
    let mut tasks = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let context = || format!("{}:{}", path.display(), line_no + 1);
        let task = match kind {
            EnvKind::Game24 => {
                let instance: Game24Instance =
                    serde_json::from_str(line).with_context(context)?;
                TaskInstance {
                    id: instance.id,
                    description: GAME24_DESCRIPTION.to_string(),
                    env_name: "game24".into(),
                    env_config: serde_json::json!({ "numbers": instance.numbers }),
                }
            }
            EnvKind::Minishop => {
                let goal: ShoppingGoal = serde_json::from_str(line).with_context(context)?;
                TaskInstance {
                    id: format!("shop-{:04}", line_no + 1),
                    description: goal.instruction.clone(),
                    env_name: "minishop".into(),
                    env_config: serde_json::json!({ "goal": goal }),
                }
            }
            EnvKind::Remote => {
                let instance: RemoteInstance =
                    serde_json::from_str(line).with_context(context)?;
                TaskInstance {
                    id: instance.id,
                    description: instance.description,
                    env_name: "remote".into(),
                    env_config: instance.config,
                }
            }
        };
        tasks.push(task);
    }
    if tasks.is_empty() {
        bail!("no instances in {}", path.display());
    }
    let mut seen = std::collections::BTreeSet::new();
    for task in &tasks {
        if !seen.insert(&task.id) {
            bail!("duplicate instance id {:?}", task.id);
        }
    }
    Ok(tasks)
}

/// Sample solvable 4-tuples from 1..=13, seeded. Every emitted instance is
/// checked solvable by the exhaustive solver.
pub fn generate_game24_instances(count: usize, seed: u64) -> Vec<Game24Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(count);
    while instances.len() < count {
        let numbers = [(); 4].map(|_| rng.gen_range(1..=13i64));
        let rationals = numbers.map(Ratio::from_integer);
        if brute_force_24(rationals).is_some() {
            instances.push(Game24Instance {
                id: format!("g24-{:04}", instances.len() + 1),
                numbers,
            });
        }
    }
    instances
}

/// Serialize instances as JSONL.
pub fn write_instances(instances: &[Game24Instance], out: &mut impl std::io::Write) -> Result<()> {
    for instance in instances {
        serde_json::to_writer(&mut *out, instance)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
