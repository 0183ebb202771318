use std::path::PathBuf;

use anocon::synthdata::{self, SynthConfig};
use anocon::tensorio::Split;
use clap::Args;

use crate::{effective_seed, CliError};

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for tensors + manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = synthdata::DESK_TRAIN_PATIENTS)]
    patients: usize,
    #[arg(long, default_value_t = synthdata::DESK_SLICES)]
    slices: usize,
    #[arg(long, default_value_t = synthdata::DESK_SIZE)]
    size: usize,
    /// Inject lesions and emit ground-truth masks.
    #[arg(long, conflicts_with = "normal")]
    anomalous: bool,
    /// Lesion-free set (the default).
    #[arg(long)]
    normal: bool,
    /// Darker instead of brighter lesions.
    #[arg(long, requires = "anomalous")]
    hypointense: bool,
    /// Manifest split field; defaults to train for normal sets and test for
    /// anomalous ones.
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split {other:?}")),
    }
}

pub fn run(args: SynthArgs) -> Result<(), CliError> {
    if args.patients == 0 || args.slices == 0 {
        return Err(CliError::usage("--patients and --slices must be positive"));
    }
    if args.size < 32 {
        return Err(CliError::usage("--size must be at least 32"));
    }
    let seed = effective_seed(args.seed)?;
    let split = args
        .split
        .unwrap_or(if args.anomalous { Split::Test } else { Split::Train });
    if split == Split::Train && args.anomalous {
        return Err(CliError::usage(
            "train split is normal-only; use --split val|test for anomalous sets",
        ));
    }
    super::create_dir(&args.out)?;
    let config = SynthConfig {
        seed,
        n_patients: args.patients,
        slices_per_patient: args.slices,
        size: args.size,
        anomalous: args.anomalous,
        hypointense: args.hypointense,
    };
    let manifest = synthdata::write_dataset(&args.out, split, &config)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "wrote {} {} patients ({} slices) to {}",
        manifest.entries.len(),
        split,
        manifest.n_slices,
        args.out.display()
    );
    Ok(())
}
