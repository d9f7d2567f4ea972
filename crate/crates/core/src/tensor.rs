//! Dense row-major float64 tensor, the universal numeric carrier.

use crate::error::{EekdError, Result};

/// Dense row-major array of `f64` with an explicit shape.
///
/// Invariants: `data.len()` equals the product of the shape dimensions, and
/// every element is finite after any exported operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking the length invariant and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(EekdError::DimensionMismatch {
                axis: "tensor data length",
                expected,
                found: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(EekdError::NonFinite("tensor construction"));
        }
        Ok(Tensor { shape, data })
    }

    /// Construction from arithmetic known to produce the right length.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Shorthand for a rank-2 tensor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a rank-2 tensor (or the leading dimension generally).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.cols();
        self.data[row * cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let cols = self.cols();
        &mut self.data[row * cols..(row + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(EekdError::NonFinite(context))
        }
    }

    fn check_rank2(&self, axis: &'static str) -> Result<()> {
        if self.shape.len() == 2 {
            Ok(())
        } else {
            Err(EekdError::DimensionMismatch {
                axis,
                expected: 2,
                found: self.shape.len(),
            })
        }
    }

    /// `self (n x k) * other (k x m) -> (n x m)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_rank2("matmul lhs rank")?;
        other.check_rank2("matmul rhs rank")?;
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(EekdError::DimensionMismatch {
                axis: "matmul inner dimension",
                expected: k,
                found: k2,
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_raw(vec![n, m], out))
    }

    /// `self^T (k x n)^T * other (n x m) -> (k x m)`; used for weight
    /// gradients `a^T * delta`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        self.check_rank2("matmul_tn lhs rank")?;
        other.check_rank2("matmul_tn rhs rank")?;
        let (n, k) = (self.shape[0], self.shape[1]);
        let (n2, m) = (other.shape[0], other.shape[1]);
        if n != n2 {
            return Err(EekdError::DimensionMismatch {
                axis: "matmul_tn shared dimension",
                expected: n,
                found: n2,
            });
        }
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let b_row = &other.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let out_row = &mut out[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_raw(vec![k, m], out))
    }

    /// `self (n x m) * other^T (k x m)^T -> (n x k)`; used for backprop
    /// `delta * W^T`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.check_rank2("matmul_nt lhs rank")?;
        other.check_rank2("matmul_nt rhs rank")?;
        let (n, m) = (self.shape[0], self.shape[1]);
        let (k, m2) = (other.shape[0], other.shape[1]);
        if m != m2 {
            return Err(EekdError::DimensionMismatch {
                axis: "matmul_nt shared dimension",
                expected: m,
                found: m2,
            });
        }
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let a_row = &self.data[i * m..(i + 1) * m];
            for p in 0..k {
                let b_row = &other.data[p * m..(p + 1) * m];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                out[i * k + p] = acc;
            }
        }
        Ok(Tensor::from_raw(vec![n, k], out))
    }

    /// Sum over rows: `(n x m) -> (m)`.
    pub fn column_sums(&self) -> Result<Tensor> {
        self.check_rank2("column_sums rank")?;
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        let _ = n;
        Ok(Tensor::from_raw(vec![m], out))
    }
}
