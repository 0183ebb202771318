//! Layer kernels. Each layer is a shape descriptor holding index ranges into
//! a flat parameter buffer; forward and backward take the buffer explicitly.
//!
//! The convolution loops are ordered so the innermost loop runs over
//! contiguous output columns, which the compiler turns into FMA vectors at
//! stride 1. Gradients are accumulated in deterministic order.

use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};

use super::{Feat, Scalar};

/// 2-D convolution descriptor. Weights are laid out `[co][ci][kh][kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub ci: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Conv2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn n_weights(ci: usize, co: usize, k: usize) -> usize {
        co * ci * k * k
    }

    /// Output-column range for which `ox*stride + kk - pad` stays in `0..w`.
    fn ox_bounds(&self, kk: usize, in_w: usize, out_w: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s }.min(out_w as isize);
        let hi = ((in_w as isize - 1 - off).div_euclid(s) + 1).clamp(lo, out_w as isize);
        (lo as usize, hi as usize)
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &Feat<T>) -> Feat<T> {
        debug_assert_eq!(x.c, self.ci);
        if self.k == 3 && self.pad == 1 && self.stride == 1 && x.w >= 2 {
            return self.forward_k3_s1(params, x);
        }
        if self.k == 3 && self.pad == 1 && self.stride == 2 && x.w >= 2 && x.w % 2 == 0 {
            return self.forward_k3_s2(params, x);
        }
        self.forward_generic(params, x)
    }

    /// Fused three-tap kernel for the stride-1 3x3 convolution; the row
    /// interior runs tap-complete so the inner loop carries three FMAs per
    /// element.
    fn forward_k3_s1<T: Scalar>(&self, params: &[T], x: &Feat<T>) -> Feat<T> {
        let (h, w) = (x.h, x.w);
        let mut out = Feat::zeros(self.co, h, w);
        let weights = &params[self.w.clone()];
        let bias = &params[self.b.clone()];
        for co in 0..self.co {
            let out_plane = out.plane_mut(co);
            out_plane.fill(bias[co]);
            for ci in 0..self.ci {
                let in_plane = x.plane(ci);
                let wbase = ((co * self.ci + ci) * 3) * 3;
                for kh in 0..3usize {
                    let w0 = weights[wbase + kh * 3];
                    let w1 = weights[wbase + kh * 3 + 1];
                    let w2 = weights[wbase + kh * 3 + 2];
                    let oy0 = 1usize.saturating_sub(kh);
                    let oy1 = (h + 1 - kh).min(h);
                    for oy in oy0..oy1 {
                        let iy = oy + kh - 1;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut out_plane[oy * w..(oy + 1) * w];
                        out_row[0] += w1 * in_row[0] + w2 * in_row[1];
                        for ox in 1..w - 1 {
                            out_row[ox] +=
                                w0 * in_row[ox - 1] + w1 * in_row[ox] + w2 * in_row[ox + 1];
                        }
                        out_row[w - 1] += w0 * in_row[w - 2] + w1 * in_row[w - 1];
                    }
                }
            }
        }
        out
    }

    /// Fused three-tap kernel for the stride-2 downsampling 3x3 convolution
    /// (even input width, so only the leading column is tap-clipped).
    fn forward_k3_s2<T: Scalar>(&self, params: &[T], x: &Feat<T>) -> Feat<T> {
        let (h, w) = (x.h, x.w);
        let (oh, ow) = self.out_hw(h, w);
        let mut out = Feat::zeros(self.co, oh, ow);
        let weights = &params[self.w.clone()];
        let bias = &params[self.b.clone()];
        for co in 0..self.co {
            let out_plane = out.plane_mut(co);
            out_plane.fill(bias[co]);
            for ci in 0..self.ci {
                let in_plane = x.plane(ci);
                let wbase = ((co * self.ci + ci) * 3) * 3;
                for kh in 0..3usize {
                    let w0 = weights[wbase + kh * 3];
                    let w1 = weights[wbase + kh * 3 + 1];
                    let w2 = weights[wbase + kh * 3 + 2];
                    // iy = 2*oy + kh - 1 must land in 0..h.
                    let oy0 = if kh == 0 { 1 } else { 0 };
                    let oy1 = ((h - kh) / 2 + 1).min(oh);
                    for oy in oy0..oy1 {
                        let iy = 2 * oy + kh - 1;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        out_row[0] += w1 * in_row[0] + w2 * in_row[1];
                        for ox in 1..ow {
                            let ix = 2 * ox;
                            out_row[ox] +=
                                w0 * in_row[ix - 1] + w1 * in_row[ix] + w2 * in_row[ix + 1];
                        }
                    }
                }
            }
        }
        out
    }

    fn forward_generic<T: Scalar>(&self, params: &[T], x: &Feat<T>) -> Feat<T> {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Feat::zeros(self.co, oh, ow);
        let weights = &params[self.w.clone()];
        let bias = &params[self.b.clone()];
        for co in 0..self.co {
            let out_plane = out.plane_mut(co);
            out_plane.fill(bias[co]);
            for ci in 0..self.ci {
                let in_plane = x.plane(ci);
                for kh in 0..self.k {
                    for kw in 0..self.k {
                        let wv = weights[((co * self.ci + ci) * self.k + kh) * self.k + kw];
                        let (ox0, ox1) = self.ox_bounds(kw, x.w, ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let (oy0, oy1) = self.ox_bounds(kh, x.h, oh);
                        for oy in oy0..oy1 {
                            let iy = oy * self.stride + kh - self.pad;
                            let in_row = &in_plane[iy * x.w..(iy + 1) * x.w];
                            let out_row = &mut out_plane[oy * ow + ox0..oy * ow + ox1];
                            if self.stride == 1 {
                                let base = ox0 + kw - self.pad;
                                let in_seg = &in_row[base..base + out_row.len()];
                                for (o, &i) in out_row.iter_mut().zip(in_seg) {
                                    *o += wv * i;
                                }
                            } else {
                                for (j, o) in out_row.iter_mut().enumerate() {
                                    let ix = (ox0 + j) * self.stride + kw - self.pad;
                                    *o += wv * in_row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `gparams` and returns the
    /// gradient with respect to the input.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &Feat<T>,
        gout: &Feat<T>,
        gparams: &mut [T],
    ) -> Feat<T> {
        let (oh, ow) = self.out_hw(x.h, x.w);
        debug_assert_eq!((gout.h, gout.w), (oh, ow));
        if self.k == 3 && self.pad == 1 && self.stride == 1 && x.w >= 2 {
            return self.backward_k3_s1(params, x, gout, gparams);
        }
        self.backward_generic(params, x, gout, gparams)
    }

    /// Stride-1 3x3 backward with fused taps: one reduction pass for the
    /// weight gradients and one three-tap pass for the input gradient.
    fn backward_k3_s1<T: Scalar>(
        &self,
        params: &[T],
        x: &Feat<T>,
        gout: &Feat<T>,
        gparams: &mut [T],
    ) -> Feat<T> {
        let (h, w) = (x.h, x.w);
        let mut gin = Feat::zeros(self.ci, h, w);
        let weights = &params[self.w.clone()];
        for co in 0..self.co {
            let g_plane = gout.plane(co);
            let mut gb = T::zero();
            for &g in g_plane {
                gb += g;
            }
            gparams[self.b.start + co] += gb;
            for ci in 0..self.ci {
                let in_plane = x.plane(ci);
                let gin_plane = gin.plane_mut(ci);
                let wbase = ((co * self.ci + ci) * 3) * 3;
                for kh in 0..3usize {
                    let oy0 = 1usize.saturating_sub(kh);
                    let oy1 = (h + 1 - kh).min(h);
                    let w0 = weights[wbase + kh * 3];
                    let w1 = weights[wbase + kh * 3 + 1];
                    let w2 = weights[wbase + kh * 3 + 2];
                    let (mut gw0, mut gw1, mut gw2) = (T::zero(), T::zero(), T::zero());
                    for oy in oy0..oy1 {
                        let iy = oy + kh - 1;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let g_row = &g_plane[oy * w..(oy + 1) * w];
                        // Weight gradients: three shifted reductions.
                        gw1 += g_row[0] * in_row[0];
                        gw2 += g_row[0] * in_row[1];
                        for ox in 1..w - 1 {
                            let g = g_row[ox];
                            gw0 += g * in_row[ox - 1];
                            gw1 += g * in_row[ox];
                            gw2 += g * in_row[ox + 1];
                        }
                        gw0 += g_row[w - 1] * in_row[w - 2];
                        gw1 += g_row[w - 1] * in_row[w - 1];
                        // Input gradient: adjoint three-tap pass.
                        let gin_row = &mut gin_plane[iy * w..(iy + 1) * w];
                        gin_row[0] += w1 * g_row[0] + w0 * g_row[1];
                        for ix in 1..w - 1 {
                            gin_row[ix] +=
                                w2 * g_row[ix - 1] + w1 * g_row[ix] + w0 * g_row[ix + 1];
                        }
                        gin_row[w - 1] += w2 * g_row[w - 2] + w1 * g_row[w - 1];
                    }
                    gparams[self.w.start + wbase + kh * 3] += gw0;
                    gparams[self.w.start + wbase + kh * 3 + 1] += gw1;
                    gparams[self.w.start + wbase + kh * 3 + 2] += gw2;
                }
            }
        }
        gin
    }

    fn backward_generic<T: Scalar>(
        &self,
        params: &[T],
        x: &Feat<T>,
        gout: &Feat<T>,
        gparams: &mut [T],
    ) -> Feat<T> {
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut gin = Feat::zeros(self.ci, x.h, x.w);
        let weights = &params[self.w.clone()];
        for co in 0..self.co {
            let g_plane = gout.plane(co);
            let mut gb = T::zero();
            for &g in g_plane {
                gb += g;
            }
            gparams[self.b.start + co] += gb;
            for ci in 0..self.ci {
                let in_plane = x.plane(ci);
                let gin_plane = gin.plane_mut(ci);
                for kh in 0..self.k {
                    for kw in 0..self.k {
                        let widx = ((co * self.ci + ci) * self.k + kh) * self.k + kw;
                        let wv = weights[widx];
                        let (ox0, ox1) = self.ox_bounds(kw, x.w, ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let (oy0, oy1) = self.ox_bounds(kh, x.h, oh);
                        let mut gw = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * self.stride + kh - self.pad;
                            let g_row = &g_plane[oy * ow + ox0..oy * ow + ox1];
                            if self.stride == 1 {
                                let base = ox0 + kw - self.pad;
                                let in_seg = &in_plane[iy * x.w + base..];
                                let gin_seg = &mut gin_plane[iy * x.w + base..];
                                for (j, &g) in g_row.iter().enumerate() {
                                    gw += g * in_seg[j];
                                    gin_seg[j] += wv * g;
                                }
                            } else {
                                for (j, &g) in g_row.iter().enumerate() {
                                    let ix = (ox0 + j) * self.stride + kw - self.pad;
                                    gw += g * in_plane[iy * x.w + ix];
                                    gin_plane[iy * x.w + ix] += wv * g;
                                }
                            }
                        }
                        gparams[self.w.start + widx] += gw;
                    }
                }
            }
        }
        gin
    }
}

/// Fully connected layer. Weights are laid out `[out][in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_in);
        let weights = &params[self.w.clone()];
        let bias = &params[self.b.clone()];
        (0..self.n_out)
            .map(|o| {
                let row = &weights[o * self.n_in..(o + 1) * self.n_in];
                let mut acc = bias[o];
                for (&w, &v) in row.iter().zip(x) {
                    acc += w * v;
                }
                acc
            })
            .collect()
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        x: &[T],
        gout: &[T],
        gparams: &mut [T],
    ) -> Vec<T> {
        let weights = &params[self.w.clone()];
        let mut gin = vec![T::zero(); self.n_in];
        for o in 0..self.n_out {
            let g = gout[o];
            gparams[self.b.start + o] += g;
            let row = &weights[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut gparams[self.w.start + o * self.n_in..self.w.start + (o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                gin[i] += row[i] * g;
            }
        }
        gin
    }
}

pub fn relu<T: Scalar>(x: &Feat<T>) -> Feat<T> {
    Feat {
        c: x.c,
        h: x.h,
        w: x.w,
        data: x.data.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

/// Gradient gate for ReLU given the forward *output*.
pub fn relu_backward<T: Scalar>(gout: &Feat<T>, out: &Feat<T>) -> Feat<T> {
    Feat {
        c: gout.c,
        h: gout.h,
        w: gout.w,
        data: gout
            .data
            .iter()
            .zip(&out.data)
            .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x<T: Scalar>(x: &Feat<T>) -> Feat<T> {
    let mut out = Feat::zeros(x.c, x.h * 2, x.w * 2);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..x.h * 2 {
            let sy = y / 2;
            let src_row = &src[sy * x.w..(sy + 1) * x.w];
            let dst_row = &mut dst[y * x.w * 2..(y + 1) * x.w * 2];
            for (xcol, d) in dst_row.iter_mut().enumerate() {
                *d = src_row[xcol / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: sums gradients over each 2x2 block.
pub fn upsample2x_backward<T: Scalar>(gout: &Feat<T>) -> Feat<T> {
    let (h, w) = (gout.h / 2, gout.w / 2);
    let mut gin = Feat::zeros(gout.c, h, w);
    for c in 0..gout.c {
        let src = gout.plane(c);
        let dst = gin.plane_mut(c);
        for y in 0..gout.h {
            let sy = y / 2;
            let src_row = &src[y * gout.w..(y + 1) * gout.w];
            let dst_row = &mut dst[sy * w..(sy + 1) * w];
            for (xcol, &g) in src_row.iter().enumerate() {
                dst_row[xcol / 2] += g;
            }
        }
    }
    gin
}

/// He-normal initialization: `N(0, sqrt(2 / fan_in))`, sampled in `f64`.
pub fn he_normal<T: Scalar>(buf: &mut [T], fan_in: usize, rng: &mut impl rand::Rng) {
    let std = (2.0 / fan_in as f64).sqrt();
    for v in buf {
        let z: f64 = StandardNormal.sample(rng);
        *v = T::from_f64(z * std);
    }
}
