//! `ladderlab`: batch experiments over the ladderlab library.
//!
//! Exit status is 0 when every asserted invariant of the task held, 1 when
//! one failed or the computation errored, and 2 for usage errors.

mod config;
mod error;
mod output;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, DEFAULT_SEED};
use crate::error::CliError;
use crate::output::Artifacts;
use crate::tasks::Context;

#[derive(Parser)]
#[command(name = "ladderlab", version, about = "Galerkin simulation and ladder steering experiments")]
struct Cli {
    #[command(subcommand)]
    task: Task,

    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out` in the config (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Generator seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also write the full control schedule to `schedule.json`.
    #[arg(long, global = true)]
    emit_schedule: bool,

    /// Primary verification truncation for `steer` and `small-time`.
    #[arg(long, global = true)]
    verify_truncation: Option<usize>,
}

#[derive(Clone, Copy, Subcommand)]
enum Task {
    /// Propagate a state under a constant control or a saved schedule.
    Simulate,
    /// Synthesize one resonant transfer and measure its averaging error.
    Pulse,
    /// Steer between two states supported on a level window.
    Steer,
    /// Plan, execute and verify a small-time transfer.
    SmallTime,
    /// Run a grid of experiments into one CSV.
    Sweep,
    /// Scan the dispersal curve and search for a dispersing K.
    Disperse,
    /// Lie rank, norms and lower bounds for a finite matrix pair.
    Findim,
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("--config", "a configuration file is required"))?;
    let cfg = ExperimentConfig::load(path)?;
    if cli.verify_truncation.is_some() && !matches!(cli.task, Task::Steer | Task::SmallTime | Task::Sweep) {
        return Err(CliError::usage(
            "--verify-truncation",
            "only applies to steer, small-time and sweep",
        ));
    }
    let out_dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        seed: cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        out: Artifacts::create(&out_dir)?,
        emit_schedule: cli.emit_schedule,
        verify_truncation: cli.verify_truncation,
    };
    let result = match cli.task {
        Task::Simulate => tasks::simulate(&cfg, &ctx),
        Task::Pulse => tasks::pulse(&cfg, &ctx),
        Task::Steer => tasks::steer(&cfg, &ctx),
        Task::SmallTime => tasks::small_time(&cfg, &ctx),
        Task::Sweep => tasks::sweep(&cfg, &ctx),
        Task::Disperse => tasks::disperse(&cfg, &ctx),
        Task::Findim => tasks::findim(&cfg, &ctx),
    };
    if let Err(e) = &result {
        if !matches!(e, CliError::Usage { .. }) {
            // Keep whatever was written and mark the directory as failed.
            ctx.out.mark_failed(&e.to_string())?;
        }
    }
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed; see report.json");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
