//! Shared fixtures for the criterion benches.

use anocon::grid::Grid;
use anocon::tensorio::{BinaryMask, Image2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_grid(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_vec(h, w, (0..h * w).map(|_| rng.random_range(lo..hi)).collect())
}

pub fn random_image(seed: u64, h: usize, w: usize) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image2D::from_vec(
        h,
        w,
        (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
}

pub fn random_mask(seed: u64, h: usize, w: usize, p: f64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryMask::from_vec(h, w, (0..h * w).map(|_| rng.random_bool(p)).collect())
}

pub fn random_scores(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        (0..n).map(|_| rng.random_bool(0.05)).collect(),
    )
}
