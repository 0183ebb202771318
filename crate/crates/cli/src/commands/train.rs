use std::path::PathBuf;

use anocon::constraints::{ConstraintKind, TSchedule};
use anocon::tensorio::{self, Split};
use anocon::trainer::{self, Method, TrainConfig, TrainSet};
use anocon::vae::{self, ReconKind};
use clap::Args;

use crate::{effective_seed, CliError};

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = Method::parse)]
    method: Method,
    /// Dataset directory holding manifest.json (train split).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hyperparameter profile: `desk` (64x64, 30 epochs) or `paper`
    /// (224x224, published settings).
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "lambda-s")]
    lambda_s: Option<f64>,
    #[arg(long = "lambda-h")]
    lambda_h: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long = "t-schedule")]
    t_schedule: Option<String>,
    /// Constraint kind override: l2-pixel | l2-image | logbarrier | entropy | none.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long = "block")]
    block_s: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    recon: Option<String>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

fn parse_constraint(s: &str) -> Result<ConstraintKind, CliError> {
    match s {
        "l2-pixel" => Ok(ConstraintKind::L2Pixel),
        "l2-image" => Ok(ConstraintKind::L2Image),
        "logbarrier" => Ok(ConstraintKind::LogBarrier),
        "entropy" => Ok(ConstraintKind::Entropy),
        "none" => Ok(ConstraintKind::None),
        other => Err(CliError::usage(format!("unknown constraint {other:?}"))),
    }
}

fn parse_recon(s: &str) -> Result<ReconKind, CliError> {
    match s {
        "bce" => Ok(ReconKind::Bce),
        "l2" => Ok(ReconKind::L2),
        "ssim" => Ok(ReconKind::Ssim),
        other => Err(CliError::usage(format!("unknown recon loss {other:?}"))),
    }
}

pub fn build_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match args.profile.as_str() {
        "desk" => trainer::desk_config(args.method, args.seed),
        "paper" => trainer::defaults_for(args.method),
        other => return Err(CliError::usage(format!("unknown profile {other:?}"))),
    };
    cfg.seed = effective_seed(args.seed)?;
    cfg.repetitions = args.reps;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(w) = args.warmup {
        cfg.warmup_epochs = w;
    }
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    if let Some(l) = args.lambda_s {
        cfg.constraint.lambda_s = l;
    }
    if let Some(l) = args.lambda_h {
        cfg.constraint.lambda_h = l;
    }
    if let Some(t) = args.t {
        cfg.constraint.t = t;
    }
    if let Some(s) = &args.t_schedule {
        cfg.constraint.t_schedule = match s.as_str() {
            "fixed" => TSchedule::Fixed,
            "geom" => TSchedule::Geometric1p01,
            other => return Err(CliError::usage(format!("unknown t schedule {other:?}"))),
        };
    }
    if let Some(c) = &args.constraint {
        cfg.constraint.kind = parse_constraint(c)?;
    }
    if let Some(b) = args.block_s {
        cfg.block_s = b;
    }
    if let Some(r) = &args.recon {
        cfg.recon = parse_recon(r)?;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    cfg.validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let cfg = build_config(&args)?;

    let manifest = tensorio::load_manifest(&args.data.join("manifest.json"))
        .map_err(|e| CliError::usage(e.to_string()))?;
    if manifest.split != Split::Train {
        return Err(CliError::usage(format!(
            "training needs a train-split manifest, got {}",
            manifest.split
        )));
    }
    let violations = manifest.validate();
    if !violations.is_empty() {
        return Err(CliError::usage(format!(
            "train manifest invalid: {}",
            violations.join("; ")
        )));
    }
    let volumes = manifest
        .load_volumes()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let data = TrainSet::from_volumes(&volumes).map_err(|e| CliError::usage(e.to_string()))?;

    super::create_dir(&args.out)?;
    let config_json = serde_json::to_string_pretty(&cfg).expect("config serialization");
    super::write_file(&args.out.join("config.json"), &config_json)?;

    let models = trainer::run_repetitions(&cfg, &data)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for trained in &models {
        let rep = trained.seed_used - cfg.seed;
        let rep_dir = args.out.join(format!("rep{rep}"));
        let extra = serde_json::json!({
            "method": cfg.method.name(),
            "train_config": cfg,
        });
        vae::save_checkpoint(
            &rep_dir,
            &trained.model,
            cfg.epochs,
            trained.seed_used,
            extra,
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
        super::write_file(&rep_dir.join("history.csv"), &trained.history.to_csv())?;
        println!(
            "rep{rep}: final total {:.5} -> {}",
            trained.history.rows.last().map(|r| r.total).unwrap_or(0.0),
            rep_dir.display()
        );
    }

    // Loss curves for the first repetition: recon, kl, constraint, total.
    let rows = &models[0].history.rows;
    let series: Vec<Vec<(f64, f64)>> = [
        rows.iter().map(|r| (r.epoch as f64, r.recon)).collect(),
        rows.iter().map(|r| (r.epoch as f64, r.kl)).collect(),
        rows.iter().map(|r| (r.epoch as f64, r.constraint)).collect(),
        rows.iter().map(|r| (r.epoch as f64, r.total)).collect(),
    ]
    .into();
    crate::plot::line_chart(&args.out.join("loss_curves.png"), &series)
        .map_err(CliError::Runtime)?;
    Ok(())
}
