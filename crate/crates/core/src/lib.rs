//! Constrained unsupervised anomaly segmentation.
//!
//! A variational autoencoder is trained on normal images only, while its
//! attention maps are regularized so that they cover the whole image. Two
//! regularizers are provided: a global size constraint enforced through an
//! extended log-barrier on gradient-weighted attention (`gradcamcons`), and a
//! Shannon-entropy maximization term on pixel-softmaxed activation maps
//! (`amcons`). At inference the attention map itself is the anomaly saliency
//! map, thresholded into a segmentation mask.
//!
//! The crate also ships the residual and histogram-equalization baselines,
//! the evaluation protocol (pixel-level AUROC/AUPRC, best DICE/IoU, per-scan
//! DICE, distribution overlap), and a deterministic synthetic data generator
//! so the whole pipeline runs on a desktop CPU.

pub mod attention;
pub mod constraints;
pub mod grid;
pub mod inference;
pub mod maskops;
pub mod metrics;
pub mod nn;
pub mod synthdata;
pub mod tensorio;
pub mod trainer;
pub mod vae;

pub use grid::Grid;
pub use tensorio::{BinaryMask, DatasetManifest, Image2D, PseudoVolume};
