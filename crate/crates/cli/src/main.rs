//! `rlhf-game`: solve, sweep, synth and verify commands for the RLHF game
//! simulator.
//!
//! Exit codes: 0 success or passed check, 1 failed check, 2 config or I/O
//! error, 3 solver error.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "rlhf-game",
    version,
    about = "Incentive-compatible preference aggregation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file; overrides the config's. Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Trial count (verify) or sample count (synth).
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Verification suite.
    #[arg(long, global = true)]
    suite: Option<String>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on truthful reports and print policy, multiplier, welfare and payments.
    Solve,
    /// Sweep one group's size-scaling and blending misreports; CSV output.
    Sweep,
    /// Synthetic epsilon-shift experiment; CSV output.
    Synth,
    /// Run a verification suite; exit 0 iff it passes.
    Verify,
}

fn load(cli: &Cli, required: bool) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if required => return Err(CliError::Config("--config is required".into())),
        None => ExperimentConfig::parse("{}")?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Solve => {
            let cfg = load(cli, true)?;
            commands::write_out(&commands::solve(&cfg)?, cfg.out.as_deref())?;
        }
        Command::Sweep => {
            let cfg = load(cli, true)?;
            commands::write_out(&commands::sweep(&cfg)?, cfg.out.as_deref())?;
        }
        Command::Synth => {
            let cfg = load(cli, false)?;
            commands::write_out(&commands::synth(&cfg, cli.trials)?, cfg.out.as_deref())?;
        }
        Command::Verify => {
            let cfg = load(cli, false)?;
            let suite = cli
                .suite
                .as_deref()
                .ok_or_else(|| CliError::Config("--suite is required".into()))?;
            let report = commands::verify(&cfg, suite, cli.trials)?;
            let mut bytes =
                serde_json::to_vec_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
            bytes.push(b'\n');
            commands::write_out(&bytes, cfg.out.as_deref())?;
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("config error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
