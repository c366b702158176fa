//! Batch episode execution: seeded instance order, a worker pool over
//! tasks, ordered JSONL logging, and report generation.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rollback_core::env::{Environment, Game24Env, MiniShopEnv, Product, RemoteEnv, ThinkWrapper};
use rollback_core::trajectory::{Mode, TaskInstance, Trajectory};
use rollback_core::{ControllerConfig, EpisodeResult, EpisodeRunner, ModelBackend, PromptSet};

use crate::config::{EnvKind, RunConfig};
use crate::instances::load_instances;
use crate::report::{aggregate, render_summary, EpisodeRecord, RunReport};

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn build_env(
    config: &RunConfig,
    catalog: &Option<Arc<Vec<Product>>>,
) -> Result<Box<dyn Environment>> {
    let inner: Box<dyn Environment> = match config.env.kind {
        EnvKind::Game24 => Box::new(Game24Env::new()),
        EnvKind::Minishop => {
            let catalog = catalog.as_ref().expect("catalog loaded for minishop").clone();
            Box::new(MiniShopEnv::new(catalog))
        }
        EnvKind::Remote => {
            let endpoint = config.env.endpoint.as_deref().expect("validated");
            Box::new(connect_remote(endpoint)?)
        }
    };
    // Think-actions only exist in react mode; the wrapper answers them
    // with a constant observation so replay stays deterministic.
    if config.controller.mode == Mode::React {
        Ok(Box::new(ThinkWrapper::new(inner)))
    } else {
        Ok(inner)
    }
}

/// `tcp:<host:port>` or `cmd:<program> [args...]`.
pub fn connect_remote(endpoint: &str) -> Result<RemoteEnv> {
    if let Some(addr) = endpoint.strip_prefix("tcp:") {
        return Ok(RemoteEnv::connect_tcp(addr)?);
    }
    if let Some(command) = endpoint.strip_prefix("cmd:") {
        let mut parts = command.split_whitespace();
        let program = parts.next().context("empty cmd endpoint")?;
        let args: Vec<String> = parts.map(str::to_string).collect();
        return Ok(RemoteEnv::spawn(program, &args)?);
    }
    bail!("endpoint must start with tcp: or cmd:, got {endpoint:?}");
}

fn prompt_set(config: &RunConfig) -> Result<PromptSet> {
    let mut prompts = match config.env.kind {
        EnvKind::Game24 => PromptSet::game24(),
        EnvKind::Minishop => PromptSet::minishop(),
        EnvKind::Remote => PromptSet::remote(),
    };
    let overrides = [
        (&config.prompts.generator_exemplars, &mut prompts.generator_exemplars),
        (&config.prompts.assistant_template, &mut prompts.assistant_template),
        (&config.prompts.assistant_examples, &mut prompts.assistant_examples),
        (&config.prompts.reflection_template, &mut prompts.reflection_template),
    ];
    for (path, slot) in overrides {
        if let Some(path) = path {
            *slot = std::fs::read_to_string(path)
                .with_context(|| format!("reading prompt file {}", path.display()))?;
        }
    }
    Ok(prompts)
}

/// A failed-to-start episode still produces a record, so the run report
/// can count it.
fn failure_record(task: &TaskInstance, message: String, started_at_ms: u64) -> EpisodeRecord {
    let result = EpisodeResult {
        success: false,
        reward: 0.0,
        final_trajectory: Trajectory::new(task.clone(), String::new()),
        rollbacks: vec![],
        discarded_feedback_count: 0,
        confidence_samples: vec![],
        total_gen_tokens: 0,
        total_assist_tokens: 0,
        wall_time_ms: 0,
        trial_index: 0,
        error: Some(message),
        generator_steps: 0,
        replayed_steps: 0,
        events: vec![],
    };
    EpisodeRecord::new(&task.id, &result, started_at_ms)
}

/// Execute every instance and return the episode records in instance
/// order. Does not touch the filesystem.
pub fn execute_run(config: &RunConfig) -> Result<Vec<EpisodeRecord>> {
    config.validate().context("invalid run config")?;
    let mut tasks = load_instances(config.env.kind, &config.env.instances)?;

    // The seed fixes the instance order.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    tasks.shuffle(&mut rng);

    let catalog = match config.env.kind {
        EnvKind::Minishop => {
            let path = config.env.catalog.as_ref().expect("validated");
            let json = std::fs::read_to_string(path)
                .with_context(|| format!("reading catalog {}", path.display()))?;
            Some(Arc::new(rollback_core::env::load_catalog(&json)?))
        }
        _ => None,
    };

    // Rollback needs reset-and-replay; a remote that declares itself
    // non-deterministic cannot honor it, so refuse before any episode.
    if config.env.kind == EnvKind::Remote && config.controller.max_rollback_attempts > 0 {
        let probe = connect_remote(config.env.endpoint.as_deref().expect("validated"))?;
        if !probe.is_deterministic() {
            bail!(
                "remote environment declares deterministic=false; \
                 rollback requires determinism (set max_rollback_attempts = 0)"
            );
        }
    }

    let generator = config.generator.build("generator")?;
    let assistant = config.assistant.build("assistant")?;
    let controller_config = config.controller_config();
    let prompts = prompt_set(config)?;

    let next_task = AtomicUsize::new(0);
    let (sender, receiver) = mpsc::channel::<(usize, Vec<EpisodeRecord>)>();
    let workers = config.parallel.min(tasks.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let sender = sender.clone();
            let tasks = &tasks;
            let next_task = &next_task;
            let catalog = &catalog;
            let generator = generator.clone();
            let assistant = assistant.clone();
            let controller_config = &controller_config;
            let prompts = &prompts;
            scope.spawn(move || loop {
                let index = next_task.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    break;
                }
                let task = &tasks[index];
                let started_at_ms = epoch_ms();
                let records = match run_task(
                    config,
                    catalog,
                    &generator,
                    &assistant,
                    controller_config,
                    prompts,
                    task,
                ) {
                    Ok(results) => results
                        .iter()
                        .map(|result| EpisodeRecord::new(&task.id, result, started_at_ms))
                        .collect(),
                    Err(e) => vec![failure_record(task, e.to_string(), started_at_ms)],
                };
                if sender.send((index, records)).is_err() {
                    break;
                }
            });
        }
        drop(sender);

        // Single writer: buffer out-of-order results, emit in task order.
        let mut buffered: Vec<Option<Vec<EpisodeRecord>>> = vec![None; tasks.len()];
        for (index, records) in receiver {
            buffered[index] = Some(records);
        }
        Ok(buffered.into_iter().flatten().flatten().collect())
    })
}

fn run_task(
    config: &RunConfig,
    catalog: &Option<Arc<Vec<Product>>>,
    generator: &Arc<dyn ModelBackend>,
    assistant: &Arc<dyn ModelBackend>,
    controller_config: &ControllerConfig,
    prompts: &PromptSet,
    task: &TaskInstance,
) -> Result<Vec<EpisodeResult>> {
    let mut env = build_env(config, catalog)?;
    let mut runner = EpisodeRunner {
        env: env.as_mut(),
        generator: generator.as_ref(),
        assistant: assistant.as_ref(),
        config: controller_config,
        prompts,
    };
    Ok(runner.run_trials(task)?)
}

/// Run everything and write the run directory: `config.json`,
/// `episodes.jsonl`, `confidence_samples.csv`, `report.json`, `summary.txt`.
pub fn run_benchmark(config: &RunConfig) -> Result<RunReport> {
    let records = execute_run(config)?;
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    write_run_dir(&config.output_dir, config, &records)
}

/// Serialize records and the derived report into `dir`.
pub fn write_run_dir(
    dir: &Path,
    config: &RunConfig,
    records: &[EpisodeRecord],
) -> Result<RunReport> {
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(config)?,
    )?;

    let mut jsonl = String::new();
    for record in records {
        jsonl.push_str(&serde_json::to_string(record)?);
        jsonl.push('\n');
    }
    std::fs::write(dir.join("episodes.jsonl"), jsonl)?;

    let mut csv = String::from("task_id,trial_index,confidence\n");
    for record in records {
        for sample in &record.episode.confidence_samples {
            csv.push_str(&format!("{},{},{}\n", record.task_id, record.trial_index, sample));
        }
    }
    std::fs::write(dir.join("confidence_samples.csv"), csv)?;

    let report = aggregate(records, 0);
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(dir.join("summary.txt"), render_summary(&report))?;
    Ok(report)
}
