//! Threshold sweeps over a recorded run.
//!
//! Accepted-feedback counts are recomputed exactly from the recorded
//! confidence samples for every theta. Success rates need a re-run, which
//! is only offered for fully scripted runs (replay mode); for live runs the
//! sweep reports accepted counts only.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{BackendKind, RunConfig};
use crate::report::{read_records, EpisodeRecord};
use crate::runner::execute_run;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub accepted_count: usize,
    /// Only present in replay mode.
    pub success_rate: Option<f64>,
}

/// Ascending grid from `from` to `to` inclusive at `step` intervals.
pub fn theta_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || to < from {
        bail!("need step > 0 and to >= from");
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        // Multiply instead of accumulating so 0.01 steps stay exact enough.
        let theta = from + f64::from(i) * step;
        if theta > to + 1e-12 {
            break;
        }
        grid.push((theta * 1e6).round() / 1e6);
        i += 1;
    }
    Ok(grid)
}

/// All recorded confidence samples, in log order.
pub fn collect_samples(records: &[EpisodeRecord]) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| r.episode.confidence_samples.iter().copied())
        .collect()
}

/// Offline sweep: for each theta, how many recorded samples pass the gate.
pub fn sweep_offline(records: &[EpisodeRecord], thetas: &[f64]) -> Result<Vec<SweepRow>> {
    let samples = collect_samples(records);
    if samples.is_empty() {
        bail!("run has no recorded confidence samples; nothing to sweep");
    }
    Ok(thetas
        .iter()
        .map(|&theta| SweepRow {
            theta,
            accepted_count: samples.iter().filter(|s| **s >= theta).count(),
            success_rate: None,
        })
        .collect())
}

/// Replay sweep: re-run the recorded scripted config at each theta.
pub fn sweep_replay(run_dir: &Path, thetas: &[f64]) -> Result<Vec<SweepRow>> {
    let config_path = run_dir.join("config.json");
    let text = std::fs::read_to_string(&config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: RunConfig = serde_json::from_str(&text).context("parsing recorded config")?;
    if config.generator.kind != BackendKind::Scripted
        || config.assistant.kind != BackendKind::Scripted
    {
        bail!("replay sweeps need fully scripted backends; this run used a live service");
    }
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let mut replay_config = config.clone();
        replay_config.controller.theta = theta;
        let records = execute_run(&replay_config)?;
        let completed: Vec<&EpisodeRecord> =
            records.iter().filter(|r| r.episode.error.is_none()).collect();
        let successes = completed.iter().filter(|r| r.episode.success).count();
        let accepted: usize = records
            .iter()
            .flat_map(|r| r.episode.confidence_samples.iter())
            .filter(|s| **s >= theta)
            .count();
        rows.push(SweepRow {
            theta,
            accepted_count: accepted,
            success_rate: Some(
                (successes as f64 / completed.len().max(1) as f64 * 10000.0).round() / 100.0,
            ),
        });
    }
    Ok(rows)
}

/// Sweep a recorded run directory offline.
pub fn sweep_run_dir(run_dir: &Path, thetas: &[f64]) -> Result<Vec<SweepRow>> {
    let (records, _) = read_records(&run_dir.join("episodes.jsonl"))?;
    sweep_offline(&records, thetas)
}

pub fn render_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("theta,accepted_count,success_rate\n");
    for row in rows {
        match row.success_rate {
            Some(rate) => out.push_str(&format!("{:.4},{},{:.2}\n", row.theta, row.accepted_count, rate)),
            None => out.push_str(&format!("{:.4},{},\n", row.theta, row.accepted_count)),
        }
    }
    out
}
