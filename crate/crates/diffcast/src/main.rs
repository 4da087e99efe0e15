//! `diffcast` — train, sample, and evaluate a diffusion time-series
//! forecaster from a TOML run configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use diffcast::cli::{self, CliError};
use diffcast::config::RunConfig;

#[derive(Parser)]
#[command(name = "diffcast", version, about = "diffusion time-series forecaster")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes model.ckpt, history.csv, schedule.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Sample probabilistic forecasts beyond the end of the series.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint over the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train normalization-independence twin models and compare them.
    AblateNi {
        #[command(flatten)]
        common: Common,
    },
    /// Time single-draw inference across horizons.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write a per-reverse-step timing breakdown.
        #[arg(long)]
        verbose: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::from_path(&common.config)
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.with_overrides(common.out.clone(), common.seed)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run() -> Result<(), CliError> {
    let args = Args::parse();
    match &args.command {
        Command::Synth { common } => cli::cmd_synth(&load_config(common)?),
        Command::Train { common } => cli::cmd_train(&load_config(common)?),
        Command::Forecast { common, checkpoint } => {
            cli::cmd_forecast(&load_config(common)?, checkpoint)
        }
        Command::Evaluate { common, checkpoint } => {
            cli::cmd_evaluate(&load_config(common)?, checkpoint)
        }
        Command::AblateNi { common } => cli::cmd_ablate_ni(&load_config(common)?),
        Command::Bench {
            common,
            checkpoint,
            verbose,
        } => cli::cmd_bench(&load_config(common)?, checkpoint, *verbose),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
