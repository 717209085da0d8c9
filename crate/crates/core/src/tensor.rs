//! Dense 2-D tensors in row-major layout.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense `rows x cols` matrix of scalars, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S = f64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    /// Build from row-major data; checks the length and that every entry
    /// is finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "Matrix::from_vec",
                expected: format!("{rows}x{cols} = {} elements", rows * cols),
                got: format!("{} elements", data.len()),
            });
        }
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite matrix element at flat index {bad}"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Validation("ragged rows in Matrix::from_rows".into()));
        }
        Self::from_vec(r, c, rows.into_iter().flatten().collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.cols)
    }

    /// `self * other^T`, i.e. `out[i][j] = dot(self.row(i), other.row(j))`.
    ///
    /// Both operand rows are contiguous, so this is the preferred product
    /// for `x * W^T` style dense layers.
    pub fn matmul_nt(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != other.cols {
            return Err(Error::DimMismatch {
                context: "matmul_nt",
                expected: format!("shared inner dim, lhs {}x{}", self.rows, self.cols),
                got: format!("rhs {}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            let out_row = out.row_mut(i);
            for (j, slot) in out_row.iter_mut().enumerate() {
                let b = other.row(j);
                let mut acc = S::zero();
                for k in 0..a.len() {
                    acc = a[k].mul_add(b[k], acc);
                }
                *slot = acc;
            }
        }
        debug_assert!(out.data.iter().all(|x| x.is_finite()));
        Ok(out)
    }

    /// Plain product `self * other`.
    pub fn matmul_nn(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != other.rows {
            return Err(Error::DimMismatch {
                context: "matmul_nn",
                expected: format!("lhs cols {} == rhs rows", self.cols),
                got: format!("rhs {}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            for (l, &a_il) in a.iter().enumerate() {
                let b_row = other.row(l);
                let out_row = out.row_mut(i);
                for k in 0..b_row.len() {
                    out_row[k] = a_il.mul_add(b_row[k], out_row[k]);
                }
            }
        }
        debug_assert!(out.data.iter().all(|x| x.is_finite()));
        Ok(out)
    }

    /// `self^T * other` over the shared row count.
    pub fn matmul_tn(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch {
                context: "matmul_tn",
                expected: format!("shared row count, lhs {}x{}", self.rows, self.cols),
                got: format!("rhs {}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &a_ri) in a.iter().enumerate() {
                let out_row = out.row_mut(i);
                for k in 0..b.len() {
                    out_row[k] = a_ri.mul_add(b[k], out_row[k]);
                }
            }
        }
        debug_assert!(out.data.iter().all(|x| x.is_finite()));
        Ok(out)
    }

    /// Subtract the column mean from every column.
    pub fn center_columns(&self) -> Matrix<S> {
        let n = S::from_f64_c(self.rows as f64);
        let mut means = vec![S::zero(); self.cols];
        for row in self.iter_rows() {
            for (m, &x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (x, &m) in row.iter_mut().zip(&means) {
                *x -= m;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |acc, &x| x.mul_add(x, acc))
            .sqrt()
    }

    /// Gather the given rows into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix<S> {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
