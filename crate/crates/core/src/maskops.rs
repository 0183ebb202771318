//! Brain-tissue extraction and binary mask morphology.
//!
//! Tissue pixels are separated from the background by an Otsu threshold over
//! a 256-bin histogram, followed by a morphological closing with a 5x5
//! disk-shaped structuring element. A slight erosion of the tissue mask is
//! used by the residual baselines to suppress reconstruction noise along the
//! tissue borderline.

use thiserror::Error;

use crate::tensorio::{BinaryMask, Image2D};

pub const OTSU_BINS: usize = 256;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("degenerate histogram: image is constant (value {value})")]
    DegenerateHistogram { value: f32 },
    #[error("pixel value {value} outside [0,1]")]
    OutOfRange { value: f32 },
}

/// Disk-shaped structuring element given as centered offsets.
#[derive(Debug, Clone)]
pub struct StructuringElement {
    radius: usize,
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    /// Disk of the given radius: offsets with `dy^2 + dx^2 <= (r + 0.5)^2`.
    ///
    /// At radius 2 this is the 5x5 footprint
    /// `[[0,1,1,1,0],[1,1,1,1,1],[1,1,1,1,1],[1,1,1,1,1],[0,1,1,1,0]]`.
    pub fn disk(radius: usize) -> Self {
        assert!(radius >= 1, "radius must be positive");
        let r = radius as isize;
        let limit = (radius as f64 + 0.5) * (radius as f64 + 0.5);
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if (dy * dy + dx * dx) as f64 <= limit {
                    offsets.push((dy, dx));
                }
            }
        }
        StructuringElement { radius, offsets }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

fn bin_of(v: f32) -> usize {
    ((v as f64 * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Threshold maximizing the between-class variance over a 256-bin histogram.
///
/// When several split points attain the maximum (the variance curve has a
/// flat plateau between well-separated modes) the returned threshold is the
/// bin boundary at the mean of the tied split indices, so a two-level image
/// thresholds halfway between the levels rather than hugging the lower one.
pub fn otsu_threshold(x: &Image2D) -> Result<f64, MaskError> {
    let mut hist = [0u64; OTSU_BINS];
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in x.values() {
        if !(0.0..=1.0).contains(&v) {
            return Err(MaskError::OutOfRange { value: v });
        }
        min = min.min(v);
        max = max.max(v);
        hist[bin_of(v)] += 1;
    }
    if min == max {
        return Err(MaskError::DegenerateHistogram { value: min });
    }

    let total = x.values().len() as f64;
    let total_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best = -1.0f64;
    let mut tied_sum = 0usize;
    let mut tied_count = 0usize;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    // Split after bin k: class 0 holds bins 0..=k, class 1 the rest.
    for k in 0..OTSU_BINS - 1 {
        w0 += hist[k] as f64;
        sum0 += k as f64 * hist[k] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let variance = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if variance > best + 1e-12 * best.abs().max(1.0) {
            best = variance;
            tied_sum = k;
            tied_count = 1;
        } else if (variance - best).abs() <= 1e-12 * best.abs().max(1.0) {
            tied_sum += k;
            tied_count += 1;
        }
    }
    if best <= 0.0 {
        return Err(MaskError::DegenerateHistogram { value: min });
    }
    let mean_k = tied_sum as f64 / tied_count as f64;
    Ok((mean_k + 1.0) / OTSU_BINS as f64)
}

/// Binary dilation; pixels outside the image are background.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let mut out = BinaryMask::filled(mask.height(), mask.width(), false);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y as usize, x as usize) {
                continue;
            }
            for &(dy, dx) in se.offsets() {
                let (ny, nx) = (y + dy, x + dx);
                if ny >= 0 && ny < h && nx >= 0 && nx < w {
                    out.set(ny as usize, nx as usize, true);
                }
            }
        }
    }
    out
}

/// Binary erosion; pixels outside the image are background, so foreground
/// touching the border erodes.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let mut out = BinaryMask::filled(mask.height(), mask.width(), false);
    for y in 0..h {
        for x in 0..w {
            let all_in = se.offsets().iter().all(|&(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                ny >= 0 && ny < h && nx >= 0 && nx < w && mask.get(ny as usize, nx as usize)
            });
            out.set(y as usize, x as usize, all_in);
        }
    }
    out
}

/// Erosion with a disk of the given radius.
pub fn erode_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(mask, &StructuringElement::disk(radius))
}

/// Morphological closing: dilation then erosion.
///
/// Computed on a buffer padded by the element radius so that mass dilated
/// past the image border still participates in the erosion; the result is
/// cropped back to the image window. This keeps closing extensive and
/// idempotent for objects touching the border.
pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let r = se.radius();
    let (h, w) = (mask.height(), mask.width());
    let mut padded = BinaryMask::filled(h + 2 * r, w + 2 * r, false);
    for y in 0..h {
        for x in 0..w {
            padded.set(y + r, x + r, mask.get(y, x));
        }
    }
    let closed = erode(&dilate(&padded, se), se);
    let mut out = BinaryMask::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, closed.get(y + r, x + r));
        }
    }
    out
}

/// Otsu binarization (`x > threshold`, strict) followed by closing with the
/// 5x5 disk.
pub fn brain_mask(x: &Image2D) -> Result<BinaryMask, MaskError> {
    let tau = otsu_threshold(x)? as f32;
    let values = x.values().iter().map(|&v| v > tau).collect();
    let binary = BinaryMask::from_vec(x.height(), x.width(), values);
    Ok(close(&binary, &StructuringElement::disk(2)))
}

/// Erosion radius used when masking residual saliency maps: 2 at 64x64,
/// scaled proportionally (and at least 1) at other resolutions.
pub fn residual_erosion_radius(height: usize) -> usize {
    (((2 * height) as f64 / 64.0).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive 256-threshold sweep recomputing class statistics per split
    /// from the raw pixels; ties averaged like the implementation.
    fn otsu_brute_force(x: &Image2D) -> f64 {
        let mut best = -1.0f64;
        let mut ties = Vec::new();
        for k in 0..OTSU_BINS - 1 {
            let boundary = (k as f64 + 1.0) / OTSU_BINS as f64;
            let (mut n0, mut n1, mut s0, mut s1) = (0f64, 0f64, 0f64, 0f64);
            for &v in x.values() {
                let b = bin_of(v) as f64;
                if bin_of(v) <= k {
                    n0 += 1.0;
                    s0 += b;
                } else {
                    n1 += 1.0;
                    s1 += b;
                }
            }
            if n0 == 0.0 || n1 == 0.0 {
                continue;
            }
            let d = s0 / n0 - s1 / n1;
            let var = n0 * n1 * d * d;
            if var > best + 1e-12 * best.abs().max(1.0) {
                best = var;
                ties = vec![boundary];
            } else if (var - best).abs() <= 1e-12 * best.abs().max(1.0) {
                ties.push(boundary);
            }
        }
        ties.iter().sum::<f64>() / ties.len() as f64
    }

    fn checker(h: usize, w: usize, lo: f32, hi: f32) -> Image2D {
        let values = (0..h * w)
            .map(|i| if i % 2 == 0 { lo } else { hi })
            .collect();
        Image2D::from_vec(h, w, values)
    }

    #[test]
    fn bimodal_image_thresholds_between_modes() {
        let img = checker(8, 8, 0.1, 0.9);
        let tau = otsu_threshold(&img).unwrap();
        assert!(tau > 0.1 && tau < 0.9, "tau = {tau}");
        // Plateau between the modes averages to the middle boundary.
        assert!((tau - 0.5).abs() < 1e-12, "tau = {tau}");
    }

    #[test]
    fn extreme_two_level_image_thresholds_at_half() {
        let img = checker(8, 8, 0.0, 1.0);
        let tau = otsu_threshold(&img).unwrap();
        assert_eq!(tau, otsu_brute_force(&img));
        assert!((tau - 0.5).abs() < 1e-12, "tau = {tau}");
    }

    #[test]
    fn otsu_matches_brute_force_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let values: Vec<f32> = (0..256)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(0.0..0.4)
                    } else {
                        rng.random_range(0.5..1.0)
                    }
                })
                .collect();
            let img = Image2D::from_vec(16, 16, values);
            assert_eq!(otsu_threshold(&img).unwrap(), otsu_brute_force(&img));
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Image2D::from_vec(4, 4, vec![0.3; 16]);
        assert!(matches!(
            otsu_threshold(&img),
            Err(MaskError::DegenerateHistogram { .. })
        ));
    }

    #[test]
    fn out_of_range_pixel_is_rejected() {
        let img = Image2D::from_vec(2, 2, vec![0.0, 0.5, 1.0, 1.5]);
        assert!(matches!(
            otsu_threshold(&img),
            Err(MaskError::OutOfRange { .. })
        ));
    }

    #[test]
    fn disk2_footprint_is_the_documented_5x5_matrix() {
        let se = StructuringElement::disk(2);
        let expected = [
            [0, 1, 1, 1, 0],
            [1, 1, 1, 1, 1],
            [1, 1, 1, 1, 1],
            [1, 1, 1, 1, 1],
            [0, 1, 1, 1, 0],
        ];
        for dy in -2isize..=2 {
            for dx in -2isize..=2 {
                let inside = se.offsets().contains(&(dy, dx));
                let want = expected[(dy + 2) as usize][(dx + 2) as usize] == 1;
                assert_eq!(inside, want, "offset ({dy},{dx})");
            }
        }
    }

    #[test]
    fn closing_fills_isolated_hole() {
        let mut mask = BinaryMask::filled(9, 9, false);
        for y in 2..7 {
            for x in 2..7 {
                mask.set(y, x, true);
            }
        }
        mask.set(4, 4, false);
        let closed = close(&mask, &StructuringElement::disk(2));
        assert!(closed.get(4, 4));
        for y in 2..7 {
            for x in 2..7 {
                assert!(closed.get(y, x));
            }
        }
    }

    #[test]
    fn erode_full_mask_shrinks_border_by_radius() {
        let full = BinaryMask::filled(8, 8, true);
        let eroded = erode_disk(&full, 2);
        assert!(!eroded.get(0, 0));
        assert!(!eroded.get(1, 4));
        assert!(eroded.get(4, 4));
        assert!(eroded.get(2, 2));
    }

    #[test]
    fn erode_empty_mask_is_empty() {
        let empty = BinaryMask::filled(6, 6, false);
        assert_eq!(erode_disk(&empty, 2).count_true(), 0);
    }

    #[test]
    fn residual_radius_anchors_at_two_for_64() {
        assert_eq!(residual_erosion_radius(64), 2);
        assert_eq!(residual_erosion_radius(224), 7);
        assert_eq!(residual_erosion_radius(16), 1);
    }

    fn random_mask(rng: &mut impl rand::Rng, h: usize, w: usize, p: f64) -> BinaryMask {
        BinaryMask::from_vec(h, w, (0..h * w).map(|_| rng.random_bool(p)).collect())
    }

    proptest! {
        #[test]
        fn erosion_is_anti_extensive(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = random_mask(&mut rng, 12, 12, 0.6);
            let e = erode_disk(&m, 2);
            for (a, b) in e.values().iter().zip(m.values()) {
                prop_assert!(!a | b);
            }
        }

        #[test]
        fn dilation_is_extensive_and_monotone(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let se = StructuringElement::disk(2);
            let m = random_mask(&mut rng, 12, 12, 0.4);
            let d = dilate(&m, &se);
            for (a, b) in m.values().iter().zip(d.values()) {
                prop_assert!(!a | b);
            }
            // Monotonicity: dilating a subset gives a subset.
            let mut sub = m.clone();
            for y in 0..6 {
                for x in 0..12 {
                    sub.set(y, x, false);
                }
            }
            let ds = dilate(&sub, &se);
            for (a, b) in ds.values().iter().zip(d.values()) {
                prop_assert!(!a | b);
            }
        }

        #[test]
        fn closing_is_idempotent(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let se = StructuringElement::disk(2);
            let m = random_mask(&mut rng, 16, 16, 0.5);
            let once = close(&m, &se);
            prop_assert_eq!(close(&once, &se), once);
        }
    }
}
