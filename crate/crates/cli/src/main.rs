//! `rkb` command-line driver. See `config.rs` for the run configuration format.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "rkb",
    version,
    about = "Drift-ambiguous Kalman-Bucy filtering toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for path simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate signal and observation paths.
    Simulate {
        /// Also write tidy long-format series.
        #[arg(long)]
        plot_data: bool,
    },
    /// Run the classical and corrected filters on simulated paths.
    Filter {
        /// Compare the corrected filter with the impulse-response decomposition.
        #[arg(long)]
        decompose_check: bool,
        #[arg(long)]
        plot_data: bool,
    },
    /// Deterministic minimax estimator and Monte Carlo worst cases.
    Robust,
    /// Solve finite estimation games.
    Game,
    /// Monte Carlo mean-square-error report.
    Eval,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .common
        .config
        .ok_or_else(|| ConfigError("missing required flag --config".into()))?;
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let cfg = RunConfig::load(&path, cli.common.seed, cli.common.out)?;
    match cli.command {
        Command::Simulate { plot_data } => commands::simulate(&cfg, plot_data),
        Command::Filter {
            decompose_check,
            plot_data,
        } => commands::filter(&cfg, decompose_check, plot_data),
        Command::Robust => commands::robust(&cfg),
        Command::Game => commands::game(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
