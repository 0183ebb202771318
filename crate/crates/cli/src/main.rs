//! Batch entry points wiring the whole pipeline together.
//!
//! ```text
//! anocon synth    --out data/train --patients 40
//! anocon train    --method amcons --data data/train --out runs/amcons
//! anocon predict  --model runs/amcons/rep0 --data data/test --out pred/test
//! anocon evaluate --pred pred/test --data data/test --threshold op --out eval/amcons
//! anocon report   --out report eval/amcons eval/vae
//! ```
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures. The `ANOCON_SEED` environment variable overrides
//! `--seed` everywhere.

mod commands;
mod plot;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "anocon",
    about = "Constrained unsupervised anomaly segmentation pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (tensor files + manifest).
    Synth(commands::synth::SynthArgs),
    /// Train a model on a normal-only training split.
    Train(commands::train::TrainArgs),
    /// Write per-slice saliency maps for a dataset.
    Predict(commands::predict::PredictArgs),
    /// Evaluate saliency predictions against ground truth.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Merge evaluation directories into one comparison table.
    Report(commands::report::ReportArgs),
}

/// `ANOCON_SEED` beats the flag when set.
pub fn effective_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var("ANOCON_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::usage(format!("ANOCON_SEED={v:?} is not an integer"))),
        Err(_) => Ok(flag),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Report(args) => commands::report::run(args),
    };
    match result {
        Ok(()) => {}
        Err(e @ CliError::Usage(_)) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
