//! Dense f64 tensors and a tape-based reverse-mode differentiator.
//!
//! [`Tensor`] is a plain row-major value. Differentiable computation happens on a
//! [`Tape`]: leaves are pushed onto it, every kernel appends a node, and
//! [`Tape::backward`] walks the nodes in reverse. A tape is confined to one
//! worker; independent tapes may run in parallel.

pub mod cost;
pub(crate) mod kernels;
mod tape;

pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[numel / cols, cols]`.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }
}
