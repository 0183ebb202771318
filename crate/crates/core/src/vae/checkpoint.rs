//! Checkpoint directory layout: `meta.json` with the model config and
//! training provenance, plus one tensor file per layer parameter chunk
//! (weights flattened to 2-D, stored through the shared tensor format).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{ModelConfig, VaeModel};
use crate::tensorio::{self, Image2D, TensorIoError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] TensorIoError),
    #[error("checkpoint meta error in {path}: {detail}")]
    Meta { path: PathBuf, detail: String },
    #[error("model error: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub epoch: usize,
    pub seed: u64,
    /// Free-form training provenance (method, hyperparameters, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &VaeModel<f32>,
    epoch: usize,
    seed: u64,
    extra: serde_json::Value,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|e| CheckpointError::Meta {
        path: dir.to_path_buf(),
        detail: e.to_string(),
    })?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config,
        epoch,
        seed,
        extra,
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serialization");
    fs::write(dir.join("meta.json"), meta_json).map_err(|e| CheckpointError::Meta {
        path: dir.join("meta.json"),
        detail: e.to_string(),
    })?;
    for (name, range, rows, cols) in model.param_chunks() {
        let values: Vec<f32> = model.params[range].to_vec();
        let img = Image2D::from_vec(rows, cols, values);
        tensorio::write_image(&dir.join(format!("{name}.bin")), &img)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(VaeModel<f32>, CheckpointMeta), CheckpointError> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| CheckpointError::Meta {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Meta {
            path: meta_path.clone(),
            detail: e.to_string(),
        })?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Meta {
            path: meta_path,
            detail: format!("unsupported format_version {}", meta.format_version),
        });
    }
    let template =
        VaeModel::<f32>::new(meta.config, 0).map_err(|e| CheckpointError::Model(e.to_string()))?;
    let mut params = vec![0.0f32; template.n_params()];
    for (name, range, rows, cols) in template.param_chunks() {
        let img = tensorio::read_image(&dir.join(format!("{name}.bin")))?;
        if img.height() != rows || img.width() != cols {
            return Err(CheckpointError::Meta {
                path: dir.join(format!("{name}.bin")),
                detail: format!(
                    "chunk shape {}x{} does not match architecture {}x{}",
                    img.height(),
                    img.width(),
                    rows,
                    cols
                ),
            });
        }
        params[range].copy_from_slice(img.values());
    }
    let model = VaeModel::from_params(meta.config, params)
        .map_err(|e| CheckpointError::Model(e.to_string()))?;
    Ok((model, meta))
}
