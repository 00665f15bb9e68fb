//! `eic`: data generation, two-phase training, rollout evaluation and report
//! comparison.

mod commands;
mod manifest;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eic_core::error::EicError;

#[derive(Parser, Debug)]
#[command(
    name = "eic",
    version,
    about = "Extrapolative-interpolative cycle frame prediction lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PhaseArg {
    Interp,
    Extrap,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic clip set.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for every random choice; overrides the config's seed.
        #[arg(long)]
        seed: u64,
    },
    /// Train the interpolator (phase interp) or the extrapolator (phase extrap).
    Train {
        #[arg(long, value_enum)]
        phase: PhaseArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Frozen interpolator checkpoint; required when lambda > 0.
        #[arg(long)]
        interp_checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run of this config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll an extrapolator out on a clip set and score every horizon.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-horizon gaps (B - A) between two metric reports.
    Compare {
        /// Given twice: the reference report A, then report B.
        #[arg(long = "report", required = true, value_name = "REPORT")]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one extrapolator per lambda, optionally evaluating each.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        interp_checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.1, 0.01])]
        lambdas: Vec<f64>,
        /// Clip set to evaluate each trained model on.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
    },
}

/// Failure of the command line itself, independent of the core library.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<EicError>() {
            return match e {
                EicError::Config(_)
                | EicError::Json(_)
                | EicError::Spec(_)
                | EicError::Unsupported(_)
                | EicError::Contract(_) => 2,
                EicError::Numerical { .. } => 4,
                EicError::Dimension { .. }
                | EicError::Arity { .. }
                | EicError::Format { .. }
                | EicError::KeyMismatch { .. }
                | EicError::Io { .. } => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
