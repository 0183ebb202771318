//! Attention-map extraction from the encoder.
//!
//! Two attention flavours are supported: gradient-weighted maps, where each
//! channel of an encoder block is weighted by the spatial mean of the
//! gradient of `sum(mu)` with respect to that channel, and non-weighted
//! activation maps (AMs), the plain channel mean of a block. Squashing (or
//! softmax normalization) happens at the block's native resolution; the map
//! is bilinearly upsampled afterwards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::nn::{Feat, Scalar};
use crate::tensorio::{BinaryMask, Image2D};
use crate::vae::{ModelError, VaeModel};

pub const MINMAX_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("correlation undefined: {series} series has zero variance")]
    ZeroVariance { series: &'static str },
    #[error("correlation needs at least 2 pixels, got {n}")]
    TooFewPixels { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    GradcamSigmoid,
    GradcamMinmax,
    AmRaw,
    AmSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Squash {
    Sigmoid,
    Minmax,
}

/// A per-pixel attention grid at some resolution, tagged with how it was
/// produced.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub kind: AttentionKind,
    pub block_index: usize,
    pub values: Grid,
}

/// Anything that can expose block activations and the gradient of `sum(mu)`
/// with respect to them. The VAE implements this through its backward pass;
/// tests implement it with closed-form miniature encoders.
pub trait CamSource {
    fn n_blocks(&self) -> usize;
    /// Activations of block `s` (1-based) for the given input.
    fn activations(&self, x: &Image2D, s: usize) -> Result<Feat<f64>, ModelError>;
    /// Activations of block `s` together with `d(sum_j mu_j)/d(activations)`.
    fn activations_and_grad(
        &self,
        x: &Image2D,
        s: usize,
    ) -> Result<(Feat<f64>, Feat<f64>), ModelError>;
}

fn feat_to_f64<T: Scalar>(f: &Feat<T>) -> Feat<f64> {
    Feat {
        c: f.c,
        h: f.h,
        w: f.w,
        data: f.data.iter().map(|v| v.as_f64()).collect(),
    }
}

impl<T: Scalar> CamSource for VaeModel<T> {
    fn n_blocks(&self) -> usize {
        self.config.n_blocks
    }

    fn activations(&self, x: &Image2D, s: usize) -> Result<Feat<f64>, ModelError> {
        if s == 0 || s > self.config.n_blocks {
            return Err(ModelError::BlockIndex {
                s,
                n_blocks: self.config.n_blocks,
            });
        }
        let cache = self.encoder_forward(self.image_to_feat(x)?);
        Ok(feat_to_f64(cache.block_out(s)))
    }

    fn activations_and_grad(
        &self,
        x: &Image2D,
        s: usize,
    ) -> Result<(Feat<f64>, Feat<f64>), ModelError> {
        let cache = self.encoder_forward(self.image_to_feat(x)?);
        let grad = self.grad_mu_sum_at_block(&cache, s)?;
        Ok((feat_to_f64(cache.block_out(s)), feat_to_f64(&grad)))
    }
}

/// Channel mean of a feature stack.
pub fn channel_mean(feat: &Feat<f64>) -> Grid {
    let n = feat.h * feat.w;
    let mut out = vec![0.0; n];
    for c in 0..feat.c {
        for (o, &v) in out.iter_mut().zip(feat.plane(c)) {
            *o += v;
        }
    }
    let k = feat.c as f64;
    Grid::from_vec(feat.h, feat.w, out.into_iter().map(|v| v / k).collect())
}

/// Channel weights for gradient-weighted attention: the spatial mean of the
/// `sum(mu)` gradient per channel, normalized by the number of spatial
/// positions of the block.
pub fn gradcam_weights(grads: &Feat<f64>) -> Vec<f64> {
    let n = (grads.h * grads.w) as f64;
    (0..grads.c)
        .map(|c| grads.plane(c).iter().sum::<f64>() / n)
        .collect()
}

fn weighted_sum(acts: &Feat<f64>, weights: &[f64]) -> Grid {
    let n = acts.h * acts.w;
    let mut out = vec![0.0; n];
    for (c, &w) in weights.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(acts.plane(c)) {
            *o += w * v;
        }
    }
    Grid::from_vec(acts.h, acts.w, out)
}

/// `(v - min) / (max - min + eps)` over the whole grid.
pub fn minmax_normalize(g: &Grid) -> Grid {
    let min = g.min();
    let max = g.max();
    let denom = max - min + MINMAX_EPS;
    g.map(|v| (v - min) / denom)
}

/// Gradient-weighted attention before squashing. Exposed for correlation
/// analysis between gradient-weighted and plain activation maps.
pub fn gradcam_pre(
    x: &Image2D,
    model: &impl CamSource,
    s: usize,
) -> Result<Grid, AttentionError> {
    let (acts, grads) = model.activations_and_grad(x, s)?;
    Ok(weighted_sum(&acts, &gradcam_weights(&grads)))
}

/// Gradient-weighted attention map of encoder block `s`.
///
/// Training squashes through a sigmoid; inference replaces it with min-max
/// normalization to avoid saturation from large activations.
pub fn gradcam(
    x: &Image2D,
    model: &impl CamSource,
    s: usize,
    squash: Squash,
) -> Result<AttentionMap, AttentionError> {
    let pre = gradcam_pre(x, model, s)?;
    let (kind, values) = match squash {
        Squash::Sigmoid => (
            AttentionKind::GradcamSigmoid,
            pre.map(|v| 1.0 / (1.0 + (-v).exp())),
        ),
        Squash::Minmax => (AttentionKind::GradcamMinmax, minmax_normalize(&pre)),
    };
    Ok(AttentionMap {
        kind,
        block_index: s,
        values,
    })
}

/// Non-weighted activation map: channel mean of block `s`, no gradients.
pub fn activation_map(
    x: &Image2D,
    model: &impl CamSource,
    s: usize,
) -> Result<AttentionMap, AttentionError> {
    let acts = model.activations(x, s)?;
    Ok(AttentionMap {
        kind: AttentionKind::AmRaw,
        block_index: s,
        values: channel_mean(&acts),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64, AttentionError> {
    if a.len() < 2 {
        return Err(AttentionError::TooFewPixels { n: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 {
        return Err(AttentionError::ZeroVariance { series: "first" });
    }
    if vb == 0.0 {
        return Err(AttentionError::ZeroVariance { series: "second" });
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Pearson correlation between pooled pre-squash gradient-weighted values
/// and activation-map values across all pixels of a batch.
pub fn gradcam_am_correlation(
    batch: &[Image2D],
    model: &impl CamSource,
    s: usize,
) -> Result<f64, AttentionError> {
    let mut cam = Vec::new();
    let mut am = Vec::new();
    for x in batch {
        let (acts, grads) = model.activations_and_grad(x, s)?;
        cam.extend_from_slice(weighted_sum(&acts, &gradcam_weights(&grads)).values());
        am.extend_from_slice(channel_mean(&acts).values());
    }
    pearson(&cam, &am)
}

/// Bilinear upsampling (half-pixel convention, clamped at borders) to the
/// target resolution. Upsampling to the native size is the identity.
pub fn upsample(map: &AttentionMap, target_h: usize, target_w: usize) -> AttentionMap {
    AttentionMap {
        kind: map.kind,
        block_index: map.block_index,
        values: bilinear(&map.values, target_h, target_w),
    }
}

pub fn bilinear(g: &Grid, th: usize, tw: usize) -> Grid {
    if th == g.height() && tw == g.width() {
        return g.clone();
    }
    let sy = g.height() as f64 / th as f64;
    let sx = g.width() as f64 / tw as f64;
    let mut out = Grid::zeros(th, tw);
    for y in 0..th {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (src_y.floor() as usize).min(g.height() - 1);
        let y1 = (y0 + 1).min(g.height() - 1);
        let fy = src_y - y0 as f64;
        for x in 0..tw {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (src_x.floor() as usize).min(g.width() - 1);
            let x1 = (x0 + 1).min(g.width() - 1);
            let fx = src_x - x0 as f64;
            let top = g.get(y0, x0) * (1.0 - fx) + g.get(y0, x1) * fx;
            let bot = g.get(y1, x0) * (1.0 - fx) + g.get(y1, x1) * fx;
            out.set(y, x, top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbour downsampling of a mask to an attention block's
/// resolution (half-pixel convention).
pub fn downsample_mask(mask: &BinaryMask, th: usize, tw: usize) -> BinaryMask {
    let sy = mask.height() as f64 / th as f64;
    let sx = mask.width() as f64 / tw as f64;
    let mut out = BinaryMask::filled(th, tw, false);
    for y in 0..th {
        let src_y = (((y as f64 + 0.5) * sy) as usize).min(mask.height() - 1);
        for x in 0..tw {
            let src_x = (((x as f64 + 0.5) * sx) as usize).min(mask.width() - 1);
            out.set(y, x, mask.get(src_y, src_x));
        }
    }
    out
}
