//! Floating-point element trait.
//!
//! Training runs in `f32`; the gradient-check suite runs the identical code
//! paths in `f64`. Everything numeric in this crate is generic over
//! [`Scalar`] so the two precisions share one implementation.

use std::fmt::{Debug, Display};

use num_traits::Float;

pub trait Scalar: Float + num_traits::NumAssign + Debug + Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
