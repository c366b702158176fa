//! Episode log lines, report aggregation, and the rendered summary.
//!
//! One JSONL line per episode. Everything wall-clock lives in the line's
//! `timing` field; the rest of the line is deterministic for scripted
//! backends, so determinism comparisons drop `timing` and nothing else.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rollback_core::EpisodeResult;

/// Version of the episode log line schema.
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Wall-clock measurements for one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at_ms: u64,
    pub wall_time_ms: u64,
    pub step_latencies_ms: Vec<u64>,
}

/// One line of `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub task_id: String,
    pub trial_index: usize,
    /// Episode result with timing fields zeroed.
    pub episode: EpisodeResult,
    pub timing: Timing,
}

impl EpisodeRecord {
    pub fn new(task_id: &str, result: &EpisodeResult, started_at_ms: u64) -> Self {
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            task_id: task_id.to_string(),
            trial_index: result.trial_index,
            timing: Timing {
                started_at_ms,
                wall_time_ms: result.wall_time_ms,
                step_latencies_ms: result.step_latencies_ms(),
            },
            episode: result.with_zeroed_timing(),
        }
    }
}

/// Aggregated metrics for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub episodes: usize,
    pub tasks: usize,
    /// Episodes that died on an unrecoverable error; excluded from averages.
    pub failed_episodes: usize,
    /// Lines that could not be parsed and were skipped.
    pub skipped_lines: usize,
    /// Percent of completed episodes with success.
    pub success_rate: f64,
    /// Percent of tasks whose final trial succeeded.
    pub task_success_rate: f64,
    /// Mean episode reward on a 0..100 scale.
    pub mean_reward: f64,
    /// Mean generator+assistant tokens per completed episode, in thousands.
    pub avg_tokens_k: f64,
    /// Mean episode wall time in seconds (from the logged timings).
    pub avg_time_s: f64,
    /// Exact token total across all episodes.
    pub total_tokens: u64,
    /// rollbacks-per-episode -> episode count.
    pub rollback_histogram: BTreeMap<usize, usize>,
    /// Discarded feedback / scored analyses.
    pub discard_rate: f64,
    /// Raw confidence samples exported next to the report.
    pub confidence_samples_path: String,
}

impl RunReport {
    /// Copy with wall-clock-derived metrics zeroed, for determinism
    /// comparisons between runs.
    pub fn with_zeroed_timing(&self) -> RunReport {
        RunReport {
            avg_time_s: 0.0,
            ..self.clone()
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Aggregate records into a report. Pure: calling it twice over the same
/// lines produces identical output.
pub fn aggregate(records: &[EpisodeRecord], skipped_lines: usize) -> RunReport {
    let episodes = records.len();
    let completed: Vec<&EpisodeRecord> =
        records.iter().filter(|r| r.episode.error.is_none()).collect();
    let failed_episodes = episodes - completed.len();

    let successes = completed.iter().filter(|r| r.episode.success).count();
    let mut tasks: BTreeMap<&str, bool> = BTreeMap::new();
    for record in records {
        let entry = tasks.entry(record.task_id.as_str()).or_insert(false);
        *entry |= record.episode.success;
    }
    let task_count = tasks.len();
    let task_successes = tasks.values().filter(|s| **s).count();

    let total_tokens: u64 = records
        .iter()
        .map(|r| r.episode.total_gen_tokens + r.episode.total_assist_tokens)
        .sum();
    let completed_tokens: u64 = completed
        .iter()
        .map(|r| r.episode.total_gen_tokens + r.episode.total_assist_tokens)
        .sum();
    let total_time_ms: u64 = completed.iter().map(|r| r.timing.wall_time_ms).sum();

    let mut rollback_histogram = BTreeMap::new();
    for record in records {
        *rollback_histogram
            .entry(record.episode.rollbacks.len())
            .or_insert(0) += 1;
    }

    let scored: usize = records.iter().map(|r| r.episode.confidence_samples.len()).sum();
    let discarded: usize = records
        .iter()
        .map(|r| r.episode.discarded_feedback_count)
        .sum();

    let denom = completed.len().max(1) as f64;
    RunReport {
        episodes,
        tasks: task_count,
        failed_episodes,
        skipped_lines,
        success_rate: round2(successes as f64 / completed.len().max(1) as f64 * 100.0),
        task_success_rate: round2(task_successes as f64 / task_count.max(1) as f64 * 100.0),
        mean_reward: round2(
            completed.iter().map(|r| r.episode.reward).sum::<f64>() / denom * 100.0,
        ),
        avg_tokens_k: round2(completed_tokens as f64 / denom / 1000.0),
        avg_time_s: round2(total_time_ms as f64 / denom / 1000.0),
        total_tokens,
        rollback_histogram,
        discard_rate: round2(if scored == 0 {
            0.0
        } else {
            discarded as f64 / scored as f64
        }),
        confidence_samples_path: "confidence_samples.csv".to_string(),
    }
}

/// Parse an `episodes.jsonl` file, skipping corrupt lines with a warning.
pub fn read_records(path: &Path) -> Result<(Vec<EpisodeRecord>, usize)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EpisodeRecord>(line) {
            Ok(record) => records.push(record),
            Err(e) => {
                log::warn!("{}:{}: skipping corrupt line: {e}", path.display(), line_no + 1);
                skipped += 1;
            }
        }
    }
    Ok((records, skipped))
}

/// Re-derive the report for a finished run directory, purely from JSONL.
pub fn report_from_dir(run_dir: &Path) -> Result<RunReport> {
    let episodes = run_dir.join("episodes.jsonl");
    if !episodes.exists() {
        bail!("{} has no episodes.jsonl", run_dir.display());
    }
    let (records, skipped) = read_records(&episodes)?;
    Ok(aggregate(&records, skipped))
}

/// Human-readable summary table.
pub fn render_summary(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("run summary\n");
    out.push_str("-----------\n");
    out.push_str(&format!("episodes            {}\n", report.episodes));
    out.push_str(&format!("tasks               {}\n", report.tasks));
    out.push_str(&format!("failed episodes     {}\n", report.failed_episodes));
    if report.skipped_lines > 0 {
        out.push_str(&format!("skipped log lines   {}\n", report.skipped_lines));
    }
    out.push_str(&format!("success rate        {:.2}%\n", report.success_rate));
    out.push_str(&format!("task success rate   {:.2}%\n", report.task_success_rate));
    out.push_str(&format!("mean reward         {:.2}\n", report.mean_reward));
    out.push_str(&format!("avg tokens (K)      {:.2}\n", report.avg_tokens_k));
    out.push_str(&format!("avg time (s)        {:.2}\n", report.avg_time_s));
    out.push_str(&format!("total tokens        {}\n", report.total_tokens));
    out.push_str(&format!("discard rate        {:.2}\n", report.discard_rate));
    out.push_str("rollbacks/episode   ");
    let histogram: Vec<String> = report
        .rollback_histogram
        .iter()
        .map(|(k, v)| format!("{k}x{v}"))
        .collect();
    out.push_str(&histogram.join(" "));
    out.push('\n');
    out.push_str(&format!(
        "confidence samples  {}\n",
        report.confidence_samples_path
    ));
    out
}
