//! Reconstruction losses, the KL term, and the combined objective.

use serde::{Deserialize, Serialize};

use super::LatentCode;
use crate::nn::{Feat, Scalar};
use crate::tensorio::Image2D;

/// Selectable reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    Bce,
    L2,
    Ssim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossSpec {
    /// KL weight.
    pub beta: f64,
    pub recon: ReconKind,
}

impl VaeLossSpec {
    pub fn new(beta: f64, recon: ReconKind) -> Self {
        assert!(beta >= 0.0, "beta must be nonnegative");
        VaeLossSpec { beta, recon }
    }
}

const BCE_EPS: f64 = 1e-7;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean pixel-wise reconstruction error of the selected kind.
pub fn recon_loss<T: Scalar>(kind: ReconKind, x: &Feat<T>, xhat: &Feat<T>) -> T {
    assert_eq!((x.h, x.w), (xhat.h, xhat.w), "shape mismatch");
    match kind {
        ReconKind::Bce => {
            let lo = T::from_f64(BCE_EPS);
            let hi = T::from_f64(1.0 - BCE_EPS);
            let mut sum = T::zero();
            for (&t, &p) in x.data.iter().zip(&xhat.data) {
                let p = p.max(lo).min(hi);
                sum += -(t * p.ln() + (T::one() - t) * (T::one() - p).ln());
            }
            sum / T::from_f64(x.data.len() as f64)
        }
        ReconKind::L2 => {
            let mut sum = T::zero();
            for (&t, &p) in x.data.iter().zip(&xhat.data) {
                let d = p - t;
                sum += d * d;
            }
            sum / T::from_f64(x.data.len() as f64)
        }
        ReconKind::Ssim => T::one() - ssim_mean(x, xhat).0,
    }
}

/// Gradient of [`recon_loss`] with respect to the reconstruction.
pub fn recon_loss_grad<T: Scalar>(kind: ReconKind, x: &Feat<T>, xhat: &Feat<T>) -> Feat<T> {
    assert_eq!((x.h, x.w), (xhat.h, xhat.w), "shape mismatch");
    let n = T::from_f64(x.data.len() as f64);
    match kind {
        ReconKind::Bce => {
            let lo = T::from_f64(BCE_EPS);
            let hi = T::from_f64(1.0 - BCE_EPS);
            let data = x
                .data
                .iter()
                .zip(&xhat.data)
                .map(|(&t, &p)| {
                    if p <= lo || p >= hi {
                        T::zero()
                    } else {
                        (-t / p + (T::one() - t) / (T::one() - p)) / n
                    }
                })
                .collect();
            Feat {
                c: x.c,
                h: x.h,
                w: x.w,
                data,
            }
        }
        ReconKind::L2 => {
            let two = T::from_f64(2.0);
            let data = x
                .data
                .iter()
                .zip(&xhat.data)
                .map(|(&t, &p)| two * (p - t) / n)
                .collect();
            Feat {
                c: x.c,
                h: x.h,
                w: x.w,
                data,
            }
        }
        ReconKind::Ssim => ssim_grad(x, xhat),
    }
}

fn gaussian_taps<T: Scalar>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::from_f64(v / sum)).collect()
}

/// Valid-mode separable Gaussian correlation of a single-channel map.
fn blur_valid<T: Scalar>(img: &[T], h: usize, w: usize, taps: &[T]) -> (Vec<T>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    // Horizontal pass.
    let mut tmp = vec![T::zero(); h * ow];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        let out = &mut tmp[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (j, &t) in taps.iter().enumerate() {
                acc += t * row[x + j];
            }
            *o = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (j, &t) in taps.iter().enumerate() {
                acc += t * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, oh, ow)
}

/// Adjoint of [`blur_valid`]: spreads a valid-region map back onto the full
/// image through the same window weights.
fn blur_valid_adjoint<T: Scalar>(g: &[T], oh: usize, ow: usize, h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    for y in 0..oh {
        for x in 0..ow {
            let gv = g[y * ow + x];
            if gv == T::zero() {
                continue;
            }
            for (jy, &ty) in taps.iter().enumerate() {
                let row = &mut out[(y + jy) * w + x..(y + jy) * w + x + taps.len()];
                let c = gv * ty;
                for (r, &tx) in row.iter_mut().zip(taps) {
                    *r += c * tx;
                }
            }
        }
    }
    out
}

struct SsimFields<T> {
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    vxx: Vec<T>,
    vyy: Vec<T>,
    vxy: Vec<T>,
    oh: usize,
    ow: usize,
}

fn ssim_fields<T: Scalar>(x: &Feat<T>, y: &Feat<T>) -> SsimFields<T> {
    assert!(
        x.h >= SSIM_WINDOW && x.w >= SSIM_WINDOW,
        "image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
    );
    let taps = gaussian_taps::<T>();
    let (h, w) = (x.h, x.w);
    let xs = &x.data;
    let ys = &y.data;
    let xx: Vec<T> = xs.iter().map(|&v| v * v).collect();
    let yy: Vec<T> = ys.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = xs.iter().zip(ys).map(|(&a, &b)| a * b).collect();
    let (mu_x, oh, ow) = blur_valid(xs, h, w, &taps);
    let (mu_y, ..) = blur_valid(ys, h, w, &taps);
    let (vxx, ..) = blur_valid(&xx, h, w, &taps);
    let (vyy, ..) = blur_valid(&yy, h, w, &taps);
    let (vxy, ..) = blur_valid(&xy, h, w, &taps);
    SsimFields {
        mu_x,
        mu_y,
        vxx,
        vyy,
        vxy,
        oh,
        ow,
    }
}

/// Mean SSIM over the valid region, with the per-pixel factors retained for
/// the gradient.
fn ssim_mean<T: Scalar>(x: &Feat<T>, y: &Feat<T>) -> (T, SsimFields<T>) {
    let f = ssim_fields(x, y);
    let c1 = T::from_f64(SSIM_C1);
    let c2 = T::from_f64(SSIM_C2);
    let two = T::from_f64(2.0);
    let mut sum = T::zero();
    for i in 0..f.mu_x.len() {
        let (mx, my) = (f.mu_x[i], f.mu_y[i]);
        let sxy = f.vxy[i] - mx * my;
        let sxx = f.vxx[i] - mx * mx;
        let syy = f.vyy[i] - my * my;
        let a1 = two * mx * my + c1;
        let a2 = two * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sxx + syy + c2;
        sum += (a1 * a2) / (b1 * b2);
    }
    (sum / T::from_f64(f.mu_x.len() as f64), f)
}

/// Gradient of `1 - mean SSIM` with respect to `y` (the reconstruction).
fn ssim_grad<T: Scalar>(x: &Feat<T>, y: &Feat<T>) -> Feat<T> {
    let taps = gaussian_taps::<T>();
    let f = ssim_fields(x, y);
    let c1 = T::from_f64(SSIM_C1);
    let c2 = T::from_f64(SSIM_C2);
    let two = T::from_f64(2.0);
    let n = f.mu_x.len();
    let mut d_mu_y = vec![T::zero(); n];
    let mut d_vxy = vec![T::zero(); n];
    let mut d_vyy = vec![T::zero(); n];
    for i in 0..n {
        let (mx, my) = (f.mu_x[i], f.mu_y[i]);
        let sxy = f.vxy[i] - mx * my;
        let sxx = f.vxx[i] - mx * mx;
        let syy = f.vyy[i] - my * my;
        let a1 = two * mx * my + c1;
        let a2 = two * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sxx + syy + c2;
        let s = (a1 * a2) / (b1 * b2);
        // S depends on mu_y directly through A1, A2, B1, B2 and on the raw
        // second moments vxy, vyy.
        d_mu_y[i] = (two * mx * (a2 - a1)) / (b1 * b2) - s * two * my * (b1.recip() - b2.recip());
        d_vxy[i] = two * a1 / (b1 * b2);
        d_vyy[i] = -s / b2;
    }
    let g_mu = blur_valid_adjoint(&d_mu_y, f.oh, f.ow, x.h, x.w, &taps);
    let g_vxy = blur_valid_adjoint(&d_vxy, f.oh, f.ow, x.h, x.w, &taps);
    let g_vyy = blur_valid_adjoint(&d_vyy, f.oh, f.ow, x.h, x.w, &taps);
    let scale = -T::one() / T::from_f64(n as f64);
    let data = (0..x.data.len())
        .map(|i| scale * (g_mu[i] + x.data[i] * g_vxy[i] + two * y.data[i] * g_vyy[i]))
        .collect();
    Feat {
        c: x.c,
        h: x.h,
        w: x.w,
        data,
    }
}

/// Public reconstruction-loss entry point on images.
pub fn reconstruction_loss(x: &Image2D, xhat: &Image2D, kind: ReconKind) -> f64 {
    let to_feat = |img: &Image2D| {
        Feat::from_vec(
            1,
            img.height(),
            img.width(),
            img.values().iter().map(|&v| v as f64).collect(),
        )
    };
    recon_loss(kind, &to_feat(x), &to_feat(xhat)).as_f64()
}

/// Mean closed-form KL divergence to the standard normal prior:
/// `(1/B) sum_b -1/2 sum_j (1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_divergence(codes: &[LatentCode]) -> f64 {
    let b = codes.len() as f64;
    codes
        .iter()
        .map(|c| {
            c.mu.iter()
                .zip(&c.logvar)
                .map(|(&mu, &lv)| -0.5 * (1.0 + lv - mu * mu - lv.exp()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / b
}

/// Per-code gradients of [`kl_divergence`]: `d/dmu = mu/B`,
/// `d/dlogvar = (exp(logvar) - 1) / (2B)`.
pub fn kl_divergence_grad(codes: &[LatentCode]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let b = codes.len() as f64;
    codes
        .iter()
        .map(|c| {
            let gmu = c.mu.iter().map(|&mu| mu / b).collect();
            let glv = c.logvar.iter().map(|&lv| (lv.exp() - 1.0) / (2.0 * b)).collect();
            (gmu, glv)
        })
        .collect()
}

/// Combined objective `total = recon + beta * kl`, returned with its parts.
pub fn vae_loss(
    x: &Image2D,
    xhat: &Image2D,
    code: &LatentCode,
    spec: &VaeLossSpec,
) -> (f64, f64, f64) {
    let recon = reconstruction_loss(x, xhat, spec.recon);
    let kl = kl_divergence(std::slice::from_ref(code));
    (recon + spec.beta * kl, recon, kl)
}
