//! Minimal CPU neural-network substrate: feature maps, conv/linear layers
//! with explicit backward passes, and an Adam optimizer.
//!
//! Everything is generic over the scalar type. Training runs in `f32` for
//! throughput; gradient-check tests instantiate the same code in `f64` so
//! central finite differences stay well above rounding noise. Random draws
//! always happen in `f64` and are then cast, so parameter initialization is
//! identical across scalar types given the same seed.

pub mod adam;
pub mod layers;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use adam::Adam;

/// Scalar type the network computes in.
pub trait Scalar:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense `channels x height x width` feature map in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Feat<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Feat<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Feat {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Feat { c, h, w, data }
    }

    pub fn plane(&self, ch: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn get(&self, ch: usize, y: usize, x: usize) -> T {
        self.data[(ch * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, ch: usize, y: usize, x: usize, v: T) {
        self.data[(ch * self.h + y) * self.w + x] = v;
    }
}
