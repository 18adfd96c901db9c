//! Dense 64-bit float tensors, row-major.

use serde::{Deserialize, Serialize};

use super::NumericsError;

/// A dense tensor of `f64` values in row-major order.
///
/// Every public constructor rejects non-finite values and shape/length
/// mismatches, so a `Tensor` obtained from safe code always holds finite
/// data with `product(shape) == values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != values.len() {
            return Err(NumericsError::ShapeLenMismatch {
                shape,
                len: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFiniteTensor);
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0), "zero-sized tensor dimension");
        Self {
            shape,
            values: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Result<Self, NumericsError> {
        Self::new(vec![1], vec![value])
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(NumericsError::ShapeLenMismatch {
                    shape: vec![n_rows, n_cols],
                    len: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(vec![n_rows, n_cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Interprets the tensor as a matrix: scalars are 1x1, vectors are a
    /// single row, higher ranks are rejected by the tape ops that call this.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row `i` of the matrix view.
    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.values[i * c..(i + 1) * c]
    }

    /// Mutates values in place; used by the optimizer and finite differences.
    /// The caller is responsible for keeping data finite — `ParamStore`
    /// re-validates on its own boundary.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
