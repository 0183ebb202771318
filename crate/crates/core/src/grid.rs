//! Dense `f64` grid used for in-memory math on saliency and attention values.
//!
//! Disk-facing image data lives in [`crate::tensorio::Image2D`] (`f32`, the
//! on-disk scalar type); everything that differentiates or accumulates goes
//! through this type instead.

use crate::tensorio::Image2D;

/// Row-major `height x width` grid of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Grid {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "data length must match shape");
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid::from_vec(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_image(&self) -> Image2D {
        Image2D::from_vec(
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_image(img: &Image2D) -> Grid {
        Grid {
            height: img.height(),
            width: img.width(),
            data: img.values().iter().map(|&v| v as f64).collect(),
        }
    }
}
