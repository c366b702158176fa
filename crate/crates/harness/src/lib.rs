//! Benchmark harness: configuration, batch execution, JSONL logs, metric
//! aggregation, and threshold sweeps for the rollback agent framework.

pub mod config;
pub mod instances;
pub mod report;
pub mod runner;
pub mod sweep;

pub use config::{BackendKind, EnvKind, Overrides, RunConfig};
pub use report::{aggregate, read_records, report_from_dir, EpisodeRecord, RunReport};
pub use runner::{execute_run, run_benchmark, write_run_dir};
pub use sweep::{sweep_offline, sweep_replay, sweep_run_dir, theta_grid, SweepRow};
