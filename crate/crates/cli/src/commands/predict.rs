use std::path::PathBuf;

use anocon::inference;
use anocon::tensorio::{self, DatasetManifest};
use anocon::trainer::{Method, TrainConfig};
use anocon::vae::{load_checkpoint, VaeModel};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint directory from `train` (omit for --method histeq).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the checkpoint method, or `histeq` for the model-free
    /// baseline.
    #[arg(long)]
    method: Option<String>,
    /// Number of saliency overlay images to render.
    #[arg(long, default_value_t = 4)]
    overlays: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictIndexEntry {
    pub patient_id: String,
    pub slice: usize,
    pub saliency: String,
    pub brain: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictIndex {
    pub method: String,
    /// Attention metadata for the stored maps: kind, block index and the
    /// squash applied at inference (absent for residual/histeq scores).
    pub kind: String,
    pub block_s: usize,
    pub squash: Option<String>,
    pub entries: Vec<PredictIndexEntry>,
}

enum Scorer {
    Model(Box<VaeModel<f32>>, Method, usize),
    HistEq,
}

pub fn run(args: PredictArgs) -> Result<(), CliError> {
    let method_flag = args.method.as_deref();
    let scorer = match (args.model.as_ref(), method_flag) {
        (None, Some("histeq")) => Scorer::HistEq,
        (None, _) => {
            return Err(CliError::usage(
                "--model is required unless --method histeq",
            ))
        }
        (Some(dir), flag) => {
            let (model, meta) =
                load_checkpoint(dir).map_err(|e| CliError::usage(e.to_string()))?;
            let train_config: TrainConfig =
                serde_json::from_value(meta.extra["train_config"].clone()).map_err(|e| {
                    CliError::usage(format!("checkpoint lacks train_config metadata: {e}"))
                })?;
            let method = match flag {
                None => train_config.method,
                Some("histeq") => {
                    return Err(CliError::usage("histeq takes no --model"));
                }
                Some(name) => {
                    let requested = Method::parse(name).map_err(CliError::Usage)?;
                    if requested != train_config.method
                        && matches!(requested, Method::GradCamCons | Method::AmCons)
                        && matches!(train_config.method, Method::Ae | Method::Vae)
                    {
                        return Err(CliError::usage(format!(
                            "checkpoint was trained as {}, cannot score as {}",
                            train_config.method.name(),
                            name
                        )));
                    }
                    requested
                }
            };
            Scorer::Model(Box::new(model), method, train_config.block_s)
        }
    };

    let manifest = tensorio::load_manifest(&args.data.join("manifest.json"))
        .map_err(|e| CliError::usage(e.to_string()))?;
    let volumes = manifest
        .load_volumes()
        .map_err(|e| CliError::runtime(e.to_string()))?;

    super::create_dir(&args.out)?;
    let mut entries = Vec::new();
    let mut overlays_left = args.overlays;
    for vol in &volumes {
        let pdir = args.out.join(&vol.patient_id);
        super::create_dir(&pdir)?;
        for (i, img) in vol.slices.iter().enumerate() {
            let sal = match &scorer {
                Scorer::Model(model, method, block_s) => {
                    inference::saliency(img, model, *method, *block_s)
                }
                Scorer::HistEq => inference::saliency_histeq(img),
            }
            .map_err(|e| CliError::runtime(e.to_string()))?;
            let brain =
                anocon::maskops::brain_mask(img).map_err(|e| CliError::runtime(e.to_string()))?;
            let sal_rel = format!("{}/sal_{i:02}.bin", vol.patient_id);
            let brain_rel = format!("{}/brain_{i:02}.bin", vol.patient_id);
            tensorio::write_image(&args.out.join(&sal_rel), &sal.to_image())
                .map_err(|e| CliError::runtime(e.to_string()))?;
            tensorio::write_mask(&args.out.join(&brain_rel), &brain)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            if overlays_left > 0 {
                let png = args.out.join(format!("{}/overlay_{i:02}.png", vol.patient_id));
                crate::plot::saliency_overlay(&png, img, &sal).map_err(CliError::Runtime)?;
                overlays_left -= 1;
            }
            entries.push(PredictIndexEntry {
                patient_id: vol.patient_id.clone(),
                slice: i,
                saliency: sal_rel,
                brain: brain_rel,
            });
        }
    }

    let (method_name, kind, block_s, squash) = match &scorer {
        Scorer::Model(_, method, block_s) => match method {
            Method::GradCamCons => (
                method.name(),
                "gradcam_minmax",
                *block_s,
                Some("minmax".to_string()),
            ),
            Method::AmCons => (method.name(), "am_raw", *block_s, Some("minmax".to_string())),
            Method::Ae | Method::Vae => (method.name(), "residual", 0, None),
        },
        Scorer::HistEq => ("histeq", "histeq", 0, None),
    };
    let index = PredictIndex {
        method: method_name.to_string(),
        kind: kind.to_string(),
        block_s,
        squash,
        entries,
    };
    let json = serde_json::to_string_pretty(&index).expect("index serialization");
    super::write_file(&args.out.join("index.json"), &json)?;
    println!(
        "wrote {} saliency maps to {}",
        index.entries.len(),
        args.out.display()
    );
    Ok(())
}

/// Loads a prediction index back.
pub fn load_index(dir: &std::path::Path) -> Result<PredictIndex, CliError> {
    let text = std::fs::read_to_string(dir.join("index.json"))
        .map_err(|e| CliError::usage(format!("no prediction index in {}: {e}", dir.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("bad index.json: {e}")))
}

/// Resolves dataset ground truth for a prediction entry, if present.
pub fn gt_path(manifest: &DatasetManifest, entry: &PredictIndexEntry) -> Option<PathBuf> {
    manifest
        .entries
        .iter()
        .find(|e| e.patient_id == entry.patient_id)
        .and_then(|e| e.masks.as_ref())
        .and_then(|masks| masks.get(entry.slice))
        .map(|rel| manifest.resolve(rel))
}
