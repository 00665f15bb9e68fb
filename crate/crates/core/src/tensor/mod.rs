//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! Values live in a [`Graph`] arena; every operation appends a node and
//! returns a [`Var`] handle. [`Graph::backward`] walks the arena in reverse
//! insertion order, which is a valid reverse topological order because a
//! node can only reference nodes created before it.
//!
//! Image tensors use the `[N, C, H, W]` layout throughout.

mod conv;
mod graph;
mod warp;

pub use conv::PadMode;
pub use graph::{Activation, Gradients, Graph, Var};

use crate::error::{EicError, Result};

/// Dense row-major tensor of 64-bit reals. A rank-0 tensor holds one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(EicError::dim(
                format!("axis {axis}"),
                "dimension sizes must be positive",
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(EicError::dim(
                "data",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(EicError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Splits a rank-4 shape into `[N, C, H, W]`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(EicError::dim(
                "rank",
                format!("expected rank-4 [N,C,H,W], got shape {other:?}"),
            )),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
