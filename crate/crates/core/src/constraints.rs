//! Attention-regularization terms and their analytic gradients.
//!
//! Two families of regularizers act on attention maps during training:
//!
//! * size terms, which push the mean attention over an image towards full
//!   coverage. The constraint value is `f_c(a) = 1 - mean(a)`; it can be
//!   enforced per pixel (the expansion loss), as a one-sided L2 penalty on
//!   the image-level mean, or through the extended log-barrier, which keeps
//!   a strictly positive gradient even when the constraint is satisfied;
//! * an entropy term, which maximizes the Shannon entropy of attention
//!   values pixel-softmaxed over brain tissue, homogenizing them without
//!   prescribing an absolute activation level.
//!
//! Every term exposes both its value and its gradient with respect to the
//! attention map, so callers can backpropagate without an autodiff tape.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::tensorio::BinaryMask;

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("attention value {value} outside [0,1]")]
    AttentionOutOfRange { value: f64 },
    #[error("barrier parameter t must be positive, got {t}")]
    NonPositiveT { t: f64 },
    #[error("constraint kind {kind:?} not valid for {operation}")]
    KindMismatch {
        kind: ConstraintKind,
        operation: &'static str,
    },
    #[error("brain mask selects no pixels")]
    EmptyBrainMask,
    #[error("negative probability {value}")]
    NegativeProbability { value: f64 },
    #[error("shape mismatch: map is {map_h}x{map_w}, mask is {mask_h}x{mask_w}")]
    ShapeMismatch {
        map_h: usize,
        map_w: usize,
        mask_h: usize,
        mask_w: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    None,
    L2Pixel,
    L2Image,
    LogBarrier,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TSchedule {
    Fixed,
    /// `t = 1 * 1.01^epoch`.
    Geometric1p01,
}

/// Which regularizer to apply and with what weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    /// Size-term weight.
    pub lambda_s: f64,
    /// Entropy-term weight; ignored by size kinds.
    pub lambda_h: f64,
    /// Barrier parameter; only meaningful for `LogBarrier`.
    pub t: f64,
    pub t_schedule: TSchedule,
}

impl ConstraintSpec {
    pub fn none() -> Self {
        ConstraintSpec {
            kind: ConstraintKind::None,
            lambda_s: 0.0,
            lambda_h: 0.0,
            t: 1.0,
            t_schedule: TSchedule::Fixed,
        }
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if self.lambda_s < 0.0 || self.lambda_h < 0.0 {
            return Err(ConstraintError::NegativeProbability {
                value: self.lambda_s.min(self.lambda_h),
            });
        }
        if self.kind == ConstraintKind::LogBarrier && self.t <= 0.0 {
            return Err(ConstraintError::NonPositiveT { t: self.t });
        }
        Ok(())
    }

    /// Barrier parameter in effect at the given epoch.
    pub fn effective_t(&self, epoch: usize) -> f64 {
        match self.t_schedule {
            TSchedule::Fixed => self.t,
            TSchedule::Geometric1p01 => 1.01f64.powi(epoch as i32),
        }
    }

    pub fn is_size_kind(&self) -> bool {
        matches!(
            self.kind,
            ConstraintKind::L2Pixel | ConstraintKind::L2Image | ConstraintKind::LogBarrier
        )
    }
}

fn check_unit_range(a: &Grid) -> Result<(), ConstraintError> {
    for &v in a.values() {
        if !(0.0..=1.0).contains(&v) {
            return Err(ConstraintError::AttentionOutOfRange { value: v });
        }
    }
    Ok(())
}

fn check_shapes(a: &Grid, mask: &BinaryMask) -> Result<(), ConstraintError> {
    if a.height() != mask.height() || a.width() != mask.width() {
        return Err(ConstraintError::ShapeMismatch {
            map_h: a.height(),
            map_w: a.width(),
            mask_h: mask.height(),
            mask_w: mask.width(),
        });
    }
    Ok(())
}

/// Global size constraint `f_c(a) = 1 - mean(a)`; zero exactly when the
/// attention covers the whole domain. With a mask, the mean runs over mask
/// pixels only.
pub fn size_constraint(a: &Grid, mask: Option<&BinaryMask>) -> Result<f64, ConstraintError> {
    check_unit_range(a)?;
    match mask {
        None => Ok(1.0 - a.mean()),
        Some(m) => {
            check_shapes(a, m)?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for (v, &keep) in a.values().iter().zip(m.values()) {
                if keep {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(ConstraintError::EmptyBrainMask);
            }
            Ok(1.0 - sum / count as f64)
        }
    }
}

/// Per-pixel expansion penalty `(1/|a|) * sum(1 - a_l)`.
///
/// Numerically equal to [`size_constraint`] without a mask, but used as the
/// pixel-level penalty mode: its gradient reaches every pixel individually.
pub fn expansion_loss_pixel(a: &Grid) -> Result<f64, ConstraintError> {
    size_constraint(a, None)
}

/// Gradient of [`expansion_loss_pixel`]: `-1/|a|` at every pixel.
pub fn expansion_loss_pixel_grad(a: &Grid) -> Grid {
    Grid::filled(a.height(), a.width(), -1.0 / a.len() as f64)
}

/// Extended log-barrier: smooth, convex, strictly increasing surrogate of
/// the exact log-barrier, defined for every real `z`.
///
/// ```text
/// psi_t(z) = -(1/t) ln(-z)                       if z <= -1/t^2
///          = t z - (1/t) ln(1/t^2) + 1/t         otherwise
/// ```
pub fn log_barrier_ext(z: f64, t: f64) -> Result<f64, ConstraintError> {
    if t <= 0.0 {
        return Err(ConstraintError::NonPositiveT { t });
    }
    let switch = -1.0 / (t * t);
    if z <= switch {
        Ok(-(1.0 / t) * (-z).ln())
    } else {
        Ok(t * z - (1.0 / t) * (1.0 / (t * t)).ln() + 1.0 / t)
    }
}

/// First derivative of [`log_barrier_ext`]: `-1/(t z)` below the switch
/// point, `t` above. Strictly positive everywhere.
pub fn log_barrier_ext_deriv(z: f64, t: f64) -> Result<f64, ConstraintError> {
    if t <= 0.0 {
        return Err(ConstraintError::NonPositiveT { t });
    }
    let switch = -1.0 / (t * t);
    if z <= switch {
        Ok(-1.0 / (t * z))
    } else {
        Ok(t)
    }
}

/// Batch size term for the configured kind, averaged over the batch.
///
/// * `L2Pixel`: `lambda_s * mean_n expansion_loss_pixel(a_n)`
/// * `L2Image`: `lambda_s * mean_n max(0, f_c(a_n))^2`
/// * `LogBarrier`: `lambda_s * mean_n psi_t(f_c(a_n))` with the effective
///   `t` from the schedule at the given epoch
pub fn size_term(
    a_batch: &[Grid],
    spec: &ConstraintSpec,
    epoch: usize,
) -> Result<f64, ConstraintError> {
    if !spec.is_size_kind() {
        return Err(ConstraintError::KindMismatch {
            kind: spec.kind,
            operation: "size_term",
        });
    }
    let n = a_batch.len() as f64;
    let mut total = 0.0;
    for a in a_batch {
        total += match spec.kind {
            ConstraintKind::L2Pixel => expansion_loss_pixel(a)?,
            ConstraintKind::L2Image => {
                let z = size_constraint(a, None)?;
                z.max(0.0) * z.max(0.0)
            }
            ConstraintKind::LogBarrier => {
                let z = size_constraint(a, None)?;
                log_barrier_ext(z, spec.effective_t(epoch))?
            }
            _ => unreachable!(),
        };
    }
    Ok(spec.lambda_s * total / n)
}

/// Gradient of [`size_term`] with respect to each attention map.
pub fn size_term_grad(
    a_batch: &[Grid],
    spec: &ConstraintSpec,
    epoch: usize,
) -> Result<Vec<Grid>, ConstraintError> {
    if !spec.is_size_kind() {
        return Err(ConstraintError::KindMismatch {
            kind: spec.kind,
            operation: "size_term_grad",
        });
    }
    let n = a_batch.len() as f64;
    a_batch
        .iter()
        .map(|a| {
            let pixels = a.len() as f64;
            let scale = match spec.kind {
                ConstraintKind::L2Pixel => -spec.lambda_s / (n * pixels),
                ConstraintKind::L2Image => {
                    let z = size_constraint(a, None)?;
                    spec.lambda_s / n * 2.0 * z.max(0.0) * (-1.0 / pixels)
                }
                ConstraintKind::LogBarrier => {
                    let z = size_constraint(a, None)?;
                    let t = spec.effective_t(epoch);
                    spec.lambda_s / n * log_barrier_ext_deriv(z, t)? * (-1.0 / pixels)
                }
                _ => unreachable!(),
            };
            Ok(Grid::filled(a.height(), a.width(), scale))
        })
        .collect()
}

/// Softmax over brain-tissue pixels; zero outside the mask.
///
/// Uses max-subtraction so large raw activations do not overflow.
pub fn pixel_softmax(a_raw: &Grid, brain: &BinaryMask) -> Result<Grid, ConstraintError> {
    check_shapes(a_raw, brain)?;
    let log_p = log_pixel_softmax(a_raw, brain)?;
    let mut out = Grid::zeros(a_raw.height(), a_raw.width());
    for (i, (&lp, &keep)) in log_p.values().iter().zip(brain.values()).enumerate() {
        if keep {
            out.values_mut()[i] = lp.exp();
        }
    }
    Ok(out)
}

/// Log-softmax over brain pixels; values outside the mask are untouched
/// (callers must gate on the mask).
fn log_pixel_softmax(a_raw: &Grid, brain: &BinaryMask) -> Result<Grid, ConstraintError> {
    let mut max = f64::NEG_INFINITY;
    let mut count = 0usize;
    for (&v, &keep) in a_raw.values().iter().zip(brain.values()) {
        if keep {
            max = max.max(v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ConstraintError::EmptyBrainMask);
    }
    let mut sum = 0.0;
    for (&v, &keep) in a_raw.values().iter().zip(brain.values()) {
        if keep {
            sum += (v - max).exp();
        }
    }
    let log_z = max + sum.ln();
    Ok(a_raw.map(|v| v - log_z))
}

/// Shannon entropy of a pixel-softmax distribution over brain pixels,
/// scaled by `1/I` with `I` the number of brain pixels:
/// `H(p) = -(1/I) sum_i p_i ln(p_i)`, with `0 ln 0 := 0`.
///
/// Bounded by `ln(I)/I`, attained exactly at the uniform distribution.
pub fn shannon_entropy(p: &Grid, brain: &BinaryMask) -> Result<f64, ConstraintError> {
    check_shapes(p, brain)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&v, &keep) in p.values().iter().zip(brain.values()) {
        if !keep {
            continue;
        }
        if v < 0.0 {
            return Err(ConstraintError::NegativeProbability { value: v });
        }
        if v > 0.0 {
            sum += v * v.ln();
        }
        count += 1;
    }
    if count == 0 {
        return Err(ConstraintError::EmptyBrainMask);
    }
    Ok(-sum / count as f64)
}

/// Entropy of the softmax of raw attention values, computed from the
/// log-softmax directly so small probabilities do not lose precision.
pub fn softmax_entropy(a_raw: &Grid, brain: &BinaryMask) -> Result<f64, ConstraintError> {
    check_shapes(a_raw, brain)?;
    let log_p = log_pixel_softmax(a_raw, brain)?;
    let count = brain.count_true() as f64;
    let mut sum = 0.0;
    for (&lp, &keep) in log_p.values().iter().zip(brain.values()) {
        if keep {
            sum += lp.exp() * lp;
        }
    }
    Ok(-sum / count)
}

/// Signed loss contribution of the entropy regularizer:
/// `-lambda_h * mean_n H(softmax(a_n))`. Minimizing it maximizes entropy.
pub fn entropy_term(
    a_raw_batch: &[Grid],
    brain_batch: &[&BinaryMask],
    spec: &ConstraintSpec,
) -> Result<f64, ConstraintError> {
    if spec.kind != ConstraintKind::Entropy {
        return Err(ConstraintError::KindMismatch {
            kind: spec.kind,
            operation: "entropy_term",
        });
    }
    assert_eq!(a_raw_batch.len(), brain_batch.len());
    let n = a_raw_batch.len() as f64;
    let mut total = 0.0;
    for (a, brain) in a_raw_batch.iter().zip(brain_batch) {
        total += softmax_entropy(a, brain)?;
    }
    Ok(-spec.lambda_h * total / n)
}

/// Gradient of [`entropy_term`] with respect to the raw attention values.
///
/// With `p = softmax(a)` over brain pixels, the derivative at brain pixel
/// `j` is `lambda_h/(N I) * p_j * (ln p_j - sum_i p_i ln p_i)`; zero
/// elsewhere.
pub fn entropy_term_grad(
    a_raw_batch: &[Grid],
    brain_batch: &[&BinaryMask],
    spec: &ConstraintSpec,
) -> Result<Vec<Grid>, ConstraintError> {
    entropy_grad_impl(a_raw_batch, brain_batch, spec, true, "entropy_term_grad")
}

/// Training flavour of the entropy objective: per-image entropy summed over
/// brain pixels instead of averaged, `-lambda_h * (1/N) sum_n sum_i p_i ln p_i`.
///
/// The `1/I` pixel normalization of [`shannon_entropy`] caps the term at
/// `ln(I)/I`, which vanishes against the reconstruction loss at any
/// realistic pixel count; the summed form is the one whose gradient is
/// large enough to homogenize attention in practice. Both gradients share
/// one implementation and the same finite-difference checks.
pub fn entropy_term_sum(
    a_raw_batch: &[Grid],
    brain_batch: &[&BinaryMask],
    spec: &ConstraintSpec,
) -> Result<f64, ConstraintError> {
    if spec.kind != ConstraintKind::Entropy {
        return Err(ConstraintError::KindMismatch {
            kind: spec.kind,
            operation: "entropy_term_sum",
        });
    }
    assert_eq!(a_raw_batch.len(), brain_batch.len());
    let n = a_raw_batch.len() as f64;
    let mut total = 0.0;
    for (a, brain) in a_raw_batch.iter().zip(brain_batch) {
        total += softmax_entropy(a, brain)? * brain.count_true() as f64;
    }
    Ok(-spec.lambda_h * total / n)
}

/// Gradient of [`entropy_term_sum`] with respect to the raw values.
pub fn entropy_term_sum_grad(
    a_raw_batch: &[Grid],
    brain_batch: &[&BinaryMask],
    spec: &ConstraintSpec,
) -> Result<Vec<Grid>, ConstraintError> {
    entropy_grad_impl(a_raw_batch, brain_batch, spec, false, "entropy_term_sum_grad")
}

fn entropy_grad_impl(
    a_raw_batch: &[Grid],
    brain_batch: &[&BinaryMask],
    spec: &ConstraintSpec,
    pixel_scaled: bool,
    operation: &'static str,
) -> Result<Vec<Grid>, ConstraintError> {
    if spec.kind != ConstraintKind::Entropy {
        return Err(ConstraintError::KindMismatch {
            kind: spec.kind,
            operation,
        });
    }
    let n = a_raw_batch.len() as f64;
    a_raw_batch
        .iter()
        .zip(brain_batch)
        .map(|(a, brain)| {
            check_shapes(a, brain)?;
            let log_p = log_pixel_softmax(a, brain)?;
            let count = brain.count_true() as f64;
            let mut mean_plogp = 0.0;
            for (&lp, &keep) in log_p.values().iter().zip(brain.values()) {
                if keep {
                    mean_plogp += lp.exp() * lp;
                }
            }
            let scale = if pixel_scaled {
                spec.lambda_h / (n * count)
            } else {
                spec.lambda_h / n
            };
            let mut out = Grid::zeros(a.height(), a.width());
            for (i, (&lp, &keep)) in log_p.values().iter().zip(brain.values()).enumerate() {
                if keep {
                    let p = lp.exp();
                    out.values_mut()[i] = scale * p * (lp - mean_plogp);
                }
            }
            Ok(out)
        })
        .collect()
}
