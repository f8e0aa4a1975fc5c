//! Dense row-major matrices and the LU solves used by the oracles.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self * other`, skipping zero entries of `self` (transition kernels are
    /// usually sparse).
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &w) in self.row(i).iter().enumerate() {
                if w != 0.0 {
                    axpy(w, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (k, &w) in v.iter().enumerate() {
            if w != 0.0 {
                axpy(w, self.row(k), &mut out);
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Inverse of `I - scale * self` by LU with partial pivoting.
    pub fn resolvent(&self, scale: f64) -> Result<Matrix> {
        self.square_dim()?;
        let lu = self.shifted(scale).lu();
        let inv = lu.try_inverse().ok_or(Error::Singular)?;
        Ok(from_nalgebra(&inv))
    }

    /// Solves `(I - scale * self) x = rhs` by LU with partial pivoting.
    pub fn solve_shifted(&self, scale: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.square_dim()?;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "rhs of length {} for a {n}x{n} system",
                rhs.len()
            )));
        }
        let b = nalgebra::DVector::from_column_slice(rhs);
        let x = self.shifted(scale).lu().solve(&b).ok_or(Error::Singular)?;
        Ok(x.iter().copied().collect())
    }

    /// Solves `(I - scale * self) X = rhs` for a matrix right-hand side.
    pub fn solve_shifted_matrix(&self, scale: f64, rhs: &Matrix) -> Result<Matrix> {
        let n = self.square_dim()?;
        if rhs.rows != n {
            return Err(Error::DimensionMismatch(format!(
                "rhs with {} rows for a {n}x{n} system",
                rhs.rows
            )));
        }
        let b = DMatrix::from_fn(n, rhs.cols, |i, j| rhs[(i, j)]);
        let x = self.shifted(scale).lu().solve(&b).ok_or(Error::Singular)?;
        Ok(from_nalgebra(&x))
    }

    fn square_dim(&self) -> Result<usize> {
        if self.rows == self.cols {
            Ok(self.rows)
        } else {
            Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    fn shifted(&self, scale: f64) -> DMatrix<f64> {
        let n = self.rows;
        DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - scale * self.data[i * n + j]
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

pub(crate) fn axpy(w: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += w * xi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Total-variation distance between two distributions on the same support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// L1 distance.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolvent_of_swap() {
        // (I - 0.5 P)^{-1} for the swap permutation: (1/(1-0.25)) [[1, 0.5], [0.5, 1]].
        let p = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let inv = p.resolvent(0.5).unwrap();
        assert!((inv[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((inv[(0, 1)] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn solve_matches_inverse() {
        let p = Matrix::from_vec(3, 3, vec![0.2, 0.3, 0.5, 0.1, 0.8, 0.1, 0.6, 0.0, 0.4]).unwrap();
        let rhs = [1.0, -2.0, 0.5];
        let x = p.solve_shifted(0.9, &rhs).unwrap();
        let inv = p.resolvent(0.9).unwrap();
        let y = inv.mul_vec(&rhs);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Matrix::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 2)).is_err());
    }
}
