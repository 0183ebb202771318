//! From trained model to anomaly saliency maps and binary segmentations.
//!
//! Attention methods use the generated attention itself as the saliency map
//! (min-max normalized at inference instead of sigmoid-squashed, to avoid
//! saturation); the residual baselines score `|x - xhat|` inside a slightly
//! eroded tissue mask, and HistEq scores the histogram-equalized intensity.

use thiserror::Error;

use crate::attention::{self, AttentionError, Squash};
use crate::grid::Grid;
use crate::maskops::{self, MaskError};
use crate::metrics::{self, EvalSlice};
use crate::tensorio::{BinaryMask, Image2D, PseudoVolume};
use crate::trainer::Method;
use crate::vae::{ModelError, VaeModel};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("usage error: {0}")]
    Usage(String),
}

/// How the segmentation threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Max-F1 operative point of the dataset-level PR curve.
    Op,
    /// Mean over normal training images of the per-image p-th percentile of
    /// brain-pixel saliency.
    Percentile { p: f64 },
    Fixed { value: f64 },
}

impl ThresholdRule {
    /// Parses `op`, `pNN` (e.g. `p98`) or `fixed:<value>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "op" {
            return Ok(ThresholdRule::Op);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let value: f64 = v.parse().map_err(|_| format!("invalid fixed threshold {v:?}"))?;
            return Ok(ThresholdRule::Fixed { value });
        }
        if let Some(v) = s.strip_prefix('p') {
            let p: f64 = v.parse().map_err(|_| format!("invalid percentile {v:?}"))?;
            if !(0.0 < p && p <= 100.0) {
                return Err(format!("percentile {p} outside (0,100]"));
            }
            return Ok(ThresholdRule::Percentile { p });
        }
        Err(format!(
            "unknown threshold rule {s:?}; expected op, pNN or fixed:<v>"
        ))
    }
}

/// Inputs a threshold rule may need.
pub struct ThresholdContext<'a> {
    /// Pooled evaluation saliencies with ground-truth labels (for `Op`).
    pub scores: Option<(&'a [f64], &'a [bool])>,
    /// Per-image brain-pixel saliencies of normal training images (for
    /// percentile rules).
    pub train_normal_brain_saliencies: Option<&'a [Vec<f64>]>,
}

/// Linear-interpolation percentile; `p = 100` is the maximum.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite saliency"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Resolves a rule into a concrete threshold.
///
/// The operative point maximizes F1 along the PR curve; the returned value
/// is placed strictly below the winning score (midway to the next distinct
/// score) so that strict-`>` segmentation reproduces the max-F1 confusion
/// matrix exactly.
pub fn fit_threshold(rule: &ThresholdRule, ctx: &ThresholdContext) -> Result<f64, InferenceError> {
    match rule {
        ThresholdRule::Fixed { value } => Ok(*value),
        ThresholdRule::Percentile { p } => {
            let per_image = ctx.train_normal_brain_saliencies.ok_or_else(|| {
                InferenceError::Usage(
                    "percentile rule needs normal training saliencies".into(),
                )
            })?;
            if per_image.is_empty() {
                return Err(InferenceError::Usage(
                    "percentile rule needs at least one training image".into(),
                ));
            }
            let sum: f64 = per_image.iter().map(|v| percentile(v, *p)).sum();
            Ok(sum / per_image.len() as f64)
        }
        ThresholdRule::Op => {
            let (scores, labels) = ctx.scores.ok_or_else(|| {
                InferenceError::Usage(
                    "operative-point rule needs scores with ground-truth masks".into(),
                )
            })?;
            let curve = metrics::pr_curve(scores, labels)
                .map_err(|e| InferenceError::Usage(e.to_string()))?;
            let best = curve
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    let fa = f1(a.precision, a.recall);
                    let fb = f1(b.precision, b.recall);
                    fa.partial_cmp(&fb).expect("finite f1")
                })
                .map(|(i, _)| i)
                .expect("non-empty curve");
            let s = curve[best].threshold;
            Ok(match curve.get(best + 1) {
                Some(next) => (s + next.threshold) / 2.0,
                None => s - 1.0,
            })
        }
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Maps brain-pixel intensities through their empirical CDF (256 bins);
/// zero outside the brain. Values land in `(0, 1]` inside the brain.
pub fn histogram_equalize(x: &Image2D, brain: &BinaryMask) -> Result<Image2D, InferenceError> {
    if brain.count_true() == 0 {
        return Err(InferenceError::Usage("empty brain mask".into()));
    }
    const BINS: usize = 256;
    let bin_of = |v: f32| ((v as f64 * BINS as f64) as usize).min(BINS - 1);
    let mut hist = [0u64; BINS];
    for (&v, &keep) in x.values().iter().zip(brain.values()) {
        if keep {
            hist[bin_of(v)] += 1;
        }
    }
    let mut cdf = [0f64; BINS];
    let mut acc = 0u64;
    let total = brain.count_true() as f64;
    for (c, &h) in cdf.iter_mut().zip(&hist) {
        acc += h;
        *c = acc as f64 / total;
    }
    let values = x
        .values()
        .iter()
        .zip(brain.values())
        .map(|(&v, &keep)| if keep { cdf[bin_of(v)] as f32 } else { 0.0 })
        .collect();
    Ok(Image2D::from_vec(x.height(), x.width(), values))
}

/// Binary segmentation: `saliency > threshold` (strict), restricted to the
/// brain mask. Pixels exactly at the threshold are excluded.
pub fn segment(saliency: &Grid, threshold: f64, brain: &BinaryMask) -> BinaryMask {
    let values = saliency
        .values()
        .iter()
        .zip(brain.values())
        .map(|(&v, &b)| b && v > threshold)
        .collect();
    BinaryMask::from_vec(saliency.height(), saliency.width(), values)
}

/// Anomaly saliency map for one image under the given method.
pub fn saliency(
    x: &Image2D,
    model: &VaeModel<f32>,
    method: Method,
    block_s: usize,
) -> Result<Grid, InferenceError> {
    let (h, w) = (x.height(), x.width());
    match method {
        Method::GradCamCons => {
            let map = attention::gradcam(x, model, block_s, Squash::Minmax)?;
            Ok(attention::upsample(&map, h, w).values)
        }
        Method::AmCons => {
            let map = attention::activation_map(x, model, block_s)?;
            let up = attention::upsample(&map, h, w).values;
            let brain = maskops::brain_mask(x)?;
            // Min-max over brain pixels makes thresholds comparable across
            // images; background stays zero.
            let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
            for (&v, &keep) in up.values().iter().zip(brain.values()) {
                if keep {
                    min = min.min(v);
                    max = max.max(v);
                }
            }
            let denom = max - min + attention::MINMAX_EPS;
            let values = up
                .values()
                .iter()
                .zip(brain.values())
                .map(|(&v, &keep)| if keep { (v - min) / denom } else { 0.0 })
                .collect();
            Ok(Grid::from_vec(h, w, values))
        }
        Method::Ae | Method::Vae => {
            let cache = &model.encode(std::slice::from_ref(x))?[0];
            let code = cache.code();
            let xhat = model.decode(&code.mu)?;
            let brain = maskops::brain_mask(x)?;
            let eroded = maskops::erode_disk(&brain, maskops::residual_erosion_radius(h));
            let values = x
                .values()
                .iter()
                .zip(xhat.values())
                .zip(eroded.values())
                .map(|((&a, &b), &keep)| {
                    if keep {
                        (a as f64 - b as f64).abs()
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(Grid::from_vec(h, w, values))
        }
    }
}

/// HistEq baseline: histogram-equalized intensity inside the slightly
/// eroded tissue mask. Needs no trained model.
pub fn saliency_histeq(x: &Image2D) -> Result<Grid, InferenceError> {
    let brain = maskops::brain_mask(x)?;
    let eq = histogram_equalize(x, &brain)?;
    let eroded = maskops::erode_disk(&brain, maskops::residual_erosion_radius(x.height()));
    let values = eq
        .values()
        .iter()
        .zip(eroded.values())
        .map(|(&v, &keep)| if keep { v as f64 } else { 0.0 })
        .collect();
    Ok(Grid::from_vec(x.height(), x.width(), values))
}

/// Builds evaluation records (saliency + ground truth + brain mask) for
/// annotated volumes.
pub fn eval_slices(
    volumes: &[PseudoVolume],
    model: &VaeModel<f32>,
    method: Method,
    block_s: usize,
) -> Result<Vec<EvalSlice>, InferenceError> {
    let mut out = Vec::new();
    for vol in volumes {
        let masks = vol.masks.as_ref().ok_or_else(|| {
            InferenceError::Usage(format!(
                "patient {} has no ground-truth masks",
                vol.patient_id
            ))
        })?;
        for (img, gt) in vol.slices.iter().zip(masks) {
            out.push(EvalSlice {
                patient_id: vol.patient_id.clone(),
                saliency: saliency(img, model, method, block_s)?,
                gt: gt.clone(),
                brain: maskops::brain_mask(img)?,
            });
        }
    }
    Ok(out)
}

/// Per-image brain-pixel saliencies of normal training images, as needed by
/// percentile threshold rules.
pub fn train_normal_saliencies(
    volumes: &[PseudoVolume],
    model: &VaeModel<f32>,
    method: Method,
    block_s: usize,
) -> Result<Vec<Vec<f64>>, InferenceError> {
    let mut out = Vec::new();
    for vol in volumes {
        for img in &vol.slices {
            let sal = saliency(img, model, method, block_s)?;
            let brain = maskops::brain_mask(img)?;
            out.push(
                sal.values()
                    .iter()
                    .zip(brain.values())
                    .filter(|(_, &b)| b)
                    .map(|(&v, _)| v)
                    .collect(),
            );
        }
    }
    Ok(out)
}
