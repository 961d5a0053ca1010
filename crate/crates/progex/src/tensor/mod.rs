//! Dense matrices and the numeric kernels everything else is built on.
//!
//! All values are `f64`. Matrices are row-major. The layout is part of
//! the public contract: serialized checkpoints and exported matrices use
//! the same row-major order.

mod tape;

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod params;

pub use tape::{Gradients, Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Additive mask value for forbidden attention links. Exactly -1e9.
pub const NEG_INF: f64 = -1.0e9;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("softmax row {0} is fully masked")]
    AllMaskedRow(usize),
    #[error("index {index} out of bounds for {what} of size {size}")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        size: usize,
    },
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match dims");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`, (n×k)·(k×m) = n×m. Loop order keeps `other` row
    /// accesses contiguous.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dims: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        let m = other.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * m..(i + 1) * m];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * m..(k + 1) * m];
                for j in 0..m {
                    orow[j] += a * brow[j];
                }
            }
        }
        out
    }

    /// `self * other^T`, (n×k)·(m×k)^T = n×m. Both operands stream rows.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt inner dims: {}x{} * ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += arow[k] * brow[k];
                }
                out.data[i * other.rows + j] = s;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add dims");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub dims");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|a| a * c).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
    }
}

/// Standard sinusoidal encoding row of width `d` for position `pos`.
pub fn sinusoid_row(pos: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    let p = pos as f64;
    for j in 0..d {
        let pair = (j / 2) as f64;
        let rate = 10000f64.powf(2.0 * pair / d as f64);
        row[j] = if j % 2 == 0 {
            (p / rate).sin()
        } else {
            (p / rate).cos()
        };
    }
    row
}

/// Row-wise softmax. Entries at or below `NEG_INF / 2` are treated as
/// masked and map to exactly zero weight; a row with no unmasked entry is
/// an error.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix, TensorError> {
    let mut out = m.clone();
    softmax_rows_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn softmax_rows_in_place(m: &mut Matrix) -> Result<(), TensorError> {
    for i in 0..m.rows {
        let row = m.row_mut(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx <= NEG_INF / 2.0 {
            return Err(TensorError::AllMaskedRow(i));
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            // exp(NEG_INF - mx) underflows to exactly 0.0 for any
            // realistic mx, so masked entries carry no weight.
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_example() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_nt_agrees_with_explicit_transpose() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 7 + j) as f64 * 0.25 - 1.0);
        let b = Matrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.5);
        let via_nt = a.matmul_nt(&b);
        let via_t = a.matmul(&b.transpose());
        for (x, y) in via_nt.data.iter().zip(&via_t.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_zeroes() {
        let m = Matrix::from_vec(2, 3, vec![0.5, NEG_INF, -0.5, 1.0, 1.0, 1.0]);
        let s = softmax_rows(&m).unwrap();
        for i in 0..2 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert!(s.get(0, 1) <= 1e-30);
        assert!((s.get(1, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_fully_masked_row() {
        let m = Matrix::from_vec(1, 2, vec![NEG_INF, NEG_INF]);
        assert_eq!(softmax_rows(&m), Err(TensorError::AllMaskedRow(0)));
    }
}
