//! Command-line harness for staged-guidance navigation experiments.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or config error,
//! 3 when every swept schedule failed to converge.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::RunStatus;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "multistage", version, about = "Staged-guidance gridworld experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check support/optimality nesting of the configured guidance stack.
    Validate(RunArgs),
    /// Solve one model exactly (optimal values and tied-optimal actions).
    Solve(RunArgs),
    /// Train a single run under the first configured schedule.
    Train(RunArgs),
    /// Run the schedule-by-seed sweep and report the critical period.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweep cells (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Replaces the trainer seed and the sweep seed list.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn run(command: &Command) -> anyhow::Result<RunStatus> {
    let args = match command {
        Command::Validate(a) | Command::Solve(a) | Command::Train(a) | Command::Sweep(a) => a,
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(seed) = args.seed_override {
        cfg.trainer.seed = seed;
        cfg.sweep.seeds = vec![seed];
    }
    let cfg = cfg.resolve()?;
    if args.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build_global()
            .map_err(|e| anyhow::anyhow!("worker pool: {e}"))?;
    }
    let out = PathBuf::from(&cfg.output.dir);
    match command {
        Command::Validate(_) => commands::cmd_validate(&cfg, &out),
        Command::Solve(_) => commands::cmd_solve(&cfg, &out),
        Command::Train(_) => commands::cmd_train(&cfg, &out),
        Command::Sweep(_) => commands::cmd_sweep(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(RunStatus::Ok) => ExitCode::from(0),
        Ok(RunStatus::ValidationFailed) => ExitCode::from(1),
        Ok(RunStatus::AllDiverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
