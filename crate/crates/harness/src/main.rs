//! `rollback-bench`: run benchmarks, re-derive reports, sweep the feedback
//! threshold, generate 24-game instances, validate shop catalogs, and serve
//! a built-in environment over the JSON-lines wire protocol.
//!
//! Exit codes: 0 success, 1 run-level failure, 2 config error.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use rollback_bench::config::{Overrides, RunConfig};
use rollback_bench::instances::{generate_game24_instances, write_instances};
use rollback_bench::report::{read_records, render_summary, report_from_dir};
use rollback_bench::runner::run_benchmark;
use rollback_bench::sweep::{render_table, sweep_offline, sweep_replay, theta_grid};
use rollback_core::env::{
    load_catalog, serve_env, validate_goal, Environment, Game24Env, MiniShopEnv, ShoppingGoal,
};
use rollback_core::trajectory::Mode;

#[derive(Parser)]
#[command(name = "rollback-bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    ActOnly,
    React,
}

impl From<ModeArg> for Mode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::ActOnly => Mode::ActOnly,
            ModeArg::React => Mode::React,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ServeEnvArg {
    Game24,
    Minishop,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a benchmark run described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        /// Wait-info steps before the assistant unlocks.
        #[arg(long)]
        wait_info: Option<usize>,
        #[arg(long)]
        max_rollbacks: Option<usize>,
        /// Upper bound on a single rollback's span.
        #[arg(long)]
        rollback_span: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        max_env_steps: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },

    /// Re-derive the report for a finished run directory from its JSONL.
    Report { run_dir: PathBuf },

    /// Recompute accepted-feedback counts across a theta grid; with
    /// --replay (scripted runs only) also re-run for success rates.
    SweepTheta {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0.80)]
        from: f64,
        #[arg(long, default_value_t = 1.00)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long)]
        replay: bool,
        /// Write the table as CSV here as well as printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Sample solvable 24-game instances (seeded) as JSONL.
    GenInstances {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Check a shop catalog (and optionally a goals file) against the schema.
    ValidateCatalog {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        goals: Option<PathBuf>,
    },

    /// Serve a built-in environment over the JSON-lines protocol
    /// (stdio by default, TCP with --tcp).
    ServeEnvExample {
        #[arg(long, value_enum, default_value = "game24")]
        env: ServeEnvArg,
        /// Catalog file, required for minishop.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Listen address, e.g. 127.0.0.1:4100. Serves one connection at a
        /// time until killed.
        #[arg(long)]
        tcp: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

const CONFIG_ERROR: u8 = 2;

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            theta,
            wait_info,
            max_rollbacks,
            rollback_span,
            mode,
            trials,
            seed,
            parallel,
            max_env_steps,
            output_dir,
        } => {
            let mut run_config = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return Ok(ExitCode::from(CONFIG_ERROR));
                }
            };
            run_config.apply_overrides(&Overrides {
                theta,
                wait_info,
                max_rollbacks,
                rollback_span,
                mode: mode.map(Mode::from),
                trials,
                seed,
                parallel,
                max_env_steps,
                output_dir,
            });
            if let Err(e) = run_config.validate() {
                eprintln!("config error: {e:#}");
                return Ok(ExitCode::from(CONFIG_ERROR));
            }
            let report = run_benchmark(&run_config)?;
            print!("{}", render_summary(&report));
            println!("run dir: {}", run_config.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Report { run_dir } => {
            let report = report_from_dir(&run_dir)?;
            print!("{}", render_summary(&report));
            if report.episodes == 0 {
                eprintln!("no episodes recorded in {}", run_dir.display());
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::SweepTheta {
            run_dir,
            from,
            to,
            step,
            replay,
            out,
        } => {
            let grid = theta_grid(from, to, step)?;
            let rows = if replay {
                sweep_replay(&run_dir, &grid)?
            } else {
                let (records, _) = read_records(&run_dir.join("episodes.jsonl"))?;
                sweep_offline(&records, &grid)?
            };
            let table = render_table(&rows);
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, table)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::GenInstances { count, seed, out } => {
            let instances = generate_game24_instances(count, seed);
            match out {
                Some(path) => {
                    let mut file = std::fs::File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    write_instances(&instances, &mut file)?;
                    println!("wrote {} instances to {}", instances.len(), path.display());
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    write_instances(&instances, &mut stdout)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::ValidateCatalog { catalog, goals } => {
            let json = std::fs::read_to_string(&catalog)
                .with_context(|| format!("reading {}", catalog.display()))?;
            let mut problems = Vec::new();
            match serde_json::from_str::<Vec<rollback_core::env::Product>>(&json) {
                Ok(products) => {
                    problems.extend(rollback_core::env::validate_catalog(&products));
                    println!("catalog: {} products", products.len());
                }
                Err(e) => problems.push(format!("catalog parse error: {e}")),
            }
            if let Some(goals_path) = goals {
                let text = std::fs::read_to_string(&goals_path)
                    .with_context(|| format!("reading {}", goals_path.display()))?;
                let mut count = 0usize;
                for (line_no, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<ShoppingGoal>(line) {
                        Ok(goal) => {
                            count += 1;
                            for problem in validate_goal(&goal) {
                                problems.push(format!("goal line {}: {problem}", line_no + 1));
                            }
                        }
                        Err(e) => {
                            problems.push(format!("goal line {}: parse error: {e}", line_no + 1))
                        }
                    }
                }
                println!("goals: {count}");
            }
            if problems.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for problem in &problems {
                    eprintln!("problem: {problem}");
                }
                Ok(ExitCode::from(1))
            }
        }

        Command::ServeEnvExample { env, catalog, tcp } => {
            let make_env = || -> Result<Box<dyn Environment>> {
                match env {
                    ServeEnvArg::Game24 => Ok(Box::new(Game24Env::new())),
                    ServeEnvArg::Minishop => {
                        let path = catalog
                            .as_ref()
                            .context("serve-env-example --env minishop needs --catalog")?;
                        let json = std::fs::read_to_string(path)
                            .with_context(|| format!("reading {}", path.display()))?;
                        let products = Arc::new(load_catalog(&json)?);
                        Ok(Box::new(MiniShopEnv::new(products)))
                    }
                }
            };
            let name = match env {
                ServeEnvArg::Game24 => "game24",
                ServeEnvArg::Minishop => "minishop",
            };
            match tcp {
                Some(addr) => {
                    let listener = TcpListener::bind(&addr)
                        .with_context(|| format!("binding {addr}"))?;
                    eprintln!("serving {name} on tcp:{addr}");
                    loop {
                        let (stream, peer) = listener.accept()?;
                        eprintln!("connection from {peer}");
                        let reader = stream.try_clone()?;
                        let mut writer = stream;
                        let mut env_instance = make_env()?;
                        if let Err(e) = serve_env(&mut env_instance, name, reader, &mut writer) {
                            eprintln!("session ended: {e}");
                        }
                    }
                }
                None => {
                    let stdin = std::io::stdin().lock();
                    let mut stdout = std::io::stdout().lock();
                    let mut env_instance = make_env()?;
                    serve_env(&mut env_instance, name, stdin, &mut stdout)?;
                    stdout.flush()?;
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
    }
}
