//! Small dense matrices for model coefficients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// `scale` on the main diagonal of a possibly rectangular matrix.
    pub fn scaled_identity(rows: usize, cols: usize, scale: T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = scale;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if nrows == 0 || ncols == 0 {
            return Err(Error::InvalidModel("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `out += self * x`.
    pub fn mul_add_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = *o + row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
    }

    pub fn frobenius(&self) -> T {
        crate::scalar::norm(&self.data)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    /// Gershgorin upper bound on the largest eigenvalue of the symmetric part.
    pub fn symmetric_part_upper_bound(&self) -> T {
        assert_eq!(self.rows, self.cols, "square matrix required");
        let half = T::lit(0.5);
        (0..self.rows)
            .map(|i| {
                let diag = self.get(i, i);
                let off = (0..self.cols)
                    .filter(|&j| j != i)
                    .fold(T::zero(), |acc, j| {
                        acc + (half * (self.get(i, j) + self.get(j, i))).abs()
                    });
                diag + off
            })
            .fold(T::neg_infinity(), T::max)
    }
}
