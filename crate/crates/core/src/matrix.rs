//! Small row-major dense matrix, sized for filters with a handful of states.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    /// Builds a matrix from row-major data. Returns `None` when the length does not match.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() }
    }

    pub fn column(values: &[T]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn checked_mul(&self, rhs: &Self) -> Option<Self> {
        if self.cols != rhs.rows {
            return None;
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for c in 0..rhs.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self[(r, k)] * rhs[(k, c)];
                }
                out[(r, c)] = acc;
            }
        }
        Some(out)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        debug_assert!(self.is_square());
        let half = T::lit(0.5);
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(r, c)] = (self[(r, c)] + self[(c, r)]) * half;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| (0..r).all(|c| (self[(r, c)] - self[(c, r)]).abs() <= tol))
    }

    /// Positive semidefinite test: Cholesky of `sym(M) + tol·I` succeeds iff every
    /// eigenvalue of `sym(M)` is above `-tol` (up to rounding).
    pub fn is_positive_semidefinite(&self, tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        let n = self.rows;
        let mut a = self.symmetrized();
        for i in 0..n {
            a[(i, i)] = a[(i, i)] + tol;
        }
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return false;
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
        true
    }

    /// Gauss-Jordan inverse with partial pivoting. `None` when the matrix is not square
    /// or a pivot falls below `n·ε·max|M|`.
    pub fn try_inverse(&self) -> Option<Self> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let scale = self.max_abs();
        if !(scale > T::zero()) || !self.is_finite() {
            return None;
        }
        let tol = T::epsilon() * T::lit(n as f64) * scale;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).expect("finite"))
                .expect("non-empty range");
            if a[(pivot, col)].abs() <= tol {
                return None;
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let p = a[(col, col)];
            for c in 0..n {
                a[(col, c)] = a[(col, c)] / p;
                inv[(col, c)] = inv[(col, c)] / p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == T::zero() {
                    continue;
                }
                for c in 0..n {
                    a[(r, c)] = a[(r, c)] - f * a[(col, c)];
                    inv[(r, c)] = inv[(r, c)] - f * inv[(col, c)];
                }
            }
        }
        Some(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        assert!(r < self.rows && c < self.cols, "matrix index out of bounds");
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        assert!(r < self.rows && c < self.cols, "matrix index out of bounds");
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Real> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        self.checked_mul(rhs).expect("matrix product dimension mismatch")
    }
}

impl<T: Real> Add for &Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum dimension mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "matrix difference dimension mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_2x2() {
        let m = Matrix::from_rows(&[vec![4.0, 7.0], vec![2.0, 6.0]]);
        let inv = m.try_inverse().unwrap();
        let id = &m * &inv;
        for r in 0..2 {
            for c in 0..2 {
                let want: f64 = if r == c { 1.0 } else { 0.0 };
                assert!((id[(r, c)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(m.try_inverse().is_none());
        assert!(Matrix::<f64>::zeros(3, 3).try_inverse().is_none());
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(m.try_inverse().unwrap(), m);
    }

    #[test]
    fn psd_detection() {
        assert!(Matrix::<f64>::zeros(2, 2).is_positive_semidefinite(1e-9));
        assert!(Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).is_positive_semidefinite(1e-9));
        assert!(!Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_positive_semidefinite(1e-9));
    }

    #[test]
    fn works_in_single_precision() {
        let m: Matrix<f32> = Matrix::from_diagonal(&[2.0, 4.0]);
        let inv = m.try_inverse().unwrap();
        assert_eq!(inv[(1, 1)], 0.25);
    }
}
