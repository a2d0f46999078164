//! Row-major dense `f64` tensor.
//!
//! Rank 0 (`shape == []`) is a scalar, rank 1 a vector, rank 2 a matrix;
//! nothing in this crate needs higher ranks. Shape-changing operations return
//! [`NumericsError::ShapeMismatch`] naming both operand shapes so a failure
//! deep inside a model points at the offending pair.

use super::{NumericsError, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` matches the shape's element count
    /// and that every entry is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::InvalidArgument {
                op: "new",
                msg: format!("shape {:?} holds {} elements, got {}", shape, numel, data.len()),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "new", value: bad });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    /// Constant-filled tensor of the given shape.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    /// Rank-1 vector.
    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// Rank-2 matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(NumericsError::ShapeMismatch {
                op: "from_rows",
                lhs: vec![n, d],
                rhs: vec![bad.len()],
            });
        }
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Self { shape: vec![n, d], data })
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a rank-0 tensor. Panics on higher ranks — callers check first.
    pub fn scalar_value(&self) -> f64 {
        assert!(self.is_scalar(), "scalar_value on shape {:?}", self.shape);
        self.data[0]
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Matrix product `self · rhs` for `[n×k] · [k×m]`.
    ///
    /// The k-loop sits in the middle so the inner m-loop streams both the
    /// output row and the `rhs` row contiguously.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_rank2("matmul", rhs)?;
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(self.mismatch("matmul", rhs));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// `self · rhsᵀ` for `[n×k] · ([m×k])ᵀ` without materializing the
    /// transpose; both operands are walked row-wise.
    pub fn matmul_transpose_rhs(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_rank2("matmul_transpose_rhs", rhs)?;
        let (n, k) = (self.shape[0], self.shape[1]);
        let (m, k2) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(self.mismatch("matmul_transpose_rhs", rhs));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                out[i * m + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// `selfᵀ · rhs` for `([n×k])ᵀ · [n×m]` without materializing the
    /// transpose.
    pub fn matmul_transpose_lhs(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_rank2("matmul_transpose_lhs", rhs)?;
        let (n, k) = (self.shape[0], self.shape[1]);
        let (n2, m) = (rhs.shape[0], rhs.shape[1]);
        if n != n2 {
            return Err(self.mismatch("matmul_transpose_lhs", rhs));
        }
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let b_row = &rhs.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![k, m], data: out })
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(self.mismatch("add", rhs));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Elementwise difference; shapes must match exactly.
    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(self.mismatch("sub", rhs));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// In-place `self += rhs`, used by gradient accumulation.
    pub fn add_assign(&mut self, rhs: &Tensor) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(self.mismatch("add_assign", rhs));
        }
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    /// Scalar multiple.
    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data.iter().map(|a| a * s).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || bias.shape.len() != 1 || self.shape[1] != bias.shape[0] {
            return Err(self.mismatch("add_bias", bias));
        }
        let cols = self.shape[1];
        let mut data = self.data.clone();
        for row in data.chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// Row-wise softmax of a rank-2 tensor, stabilized by subtracting each
    /// row's maximum before exponentiating.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.shape.len() != 2 || self.shape[1] == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "softmax_rows",
                msg: format!("need a non-empty rank-2 tensor, got shape {:?}", self.shape),
            });
        }
        let cols = self.shape[1];
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / sum));
        }
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Tensor {
        let (n, m) = (self.rows(), self.cols());
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = self.data[i * m + j];
            }
        }
        Tensor { shape: vec![m, n], data }
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    /// Largest absolute elementwise difference, for closeness assertions.
    pub fn max_abs_diff(&self, rhs: &Tensor) -> f64 {
        assert_eq!(self.shape, rhs.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_rank2(&self, op: &'static str, rhs: &Tensor) -> Result<()> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 {
            return Err(self.mismatch(op, rhs));
        }
        Ok(())
    }

    fn mismatch(&self, op: &'static str, rhs: &Tensor) -> NumericsError {
        NumericsError::ShapeMismatch { op, lhs: self.shape.clone(), rhs: rhs.shape.clone() }
    }
}
