//! Dense N-dimensional tensors with reverse-mode gradients.
//!
//! [`Tensor`] is a plain value: a shape plus a flat row-major buffer.
//! Canonical image layout is `[batch, channels, height, width]`. All
//! differentiable computation goes through a [`Graph`], which records every
//! executed op and replays the tape backwards to accumulate gradients.
//!
//! Convolution here means cross-correlation (no kernel flip), the
//! convention of the network literature, with zero padding.

mod graph;
pub mod ops;

pub use graph::{GradStore, Graph, NodeId};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor: `product(shape) == data.len()`, row-major.
///
/// A rank-0 tensor (`shape == []`) is a scalar holding one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "Tensor::new",
                "positive extents",
                format!("{shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{numel} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 scalar tensor.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "Tensor::item",
                "a single element",
                format!("{:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interpret as `[n, c, h, w]`.
    pub fn dims4(&self, context: &str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(
                context,
                "a rank-4 [n, c, h, w] tensor",
                format!("{:?}", self.shape),
            )),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Convert element type, e.g. widen `f32` tensors to `f64` for checks.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Check two tensors share a shape; `context` names the operation.
pub(crate) fn expect_same_shape<T: Scalar>(
    context: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            context,
            format!("matching shapes (left is {:?})", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}
