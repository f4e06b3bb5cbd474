use serde::{Deserialize, Serialize};

use super::CompressionError;
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Linear time-invariant model: `x ← F·x + B·u`, `z = H·x`, process noise `Q`, measurement noise `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanModel<T> {
    f: Matrix<T>,
    b: Matrix<T>,
    h: Matrix<T>,
    q: Matrix<T>,
    r: Matrix<T>,
}

fn expect_shape<T: Real>(
    what: &'static str,
    m: &Matrix<T>,
    expected: (usize, usize),
) -> Result<(), CompressionError> {
    if m.shape() == expected {
        Ok(())
    } else {
        Err(CompressionError::Dimension { what, expected, found: m.shape() })
    }
}

fn check_covariance<T: Real>(what: &'static str, m: &Matrix<T>) -> Result<(), CompressionError> {
    let tol = T::lit(1e-9) * (T::one() + m.max_abs());
    if !m.is_symmetric(tol) {
        return Err(CompressionError::NotSymmetric(what));
    }
    if !m.is_positive_semidefinite(tol) {
        return Err(CompressionError::NotPositiveSemidefinite(what));
    }
    Ok(())
}

impl<T: Real> KalmanModel<T> {
    /// `f`: n×n, `b`: n×k, `h`: m×n, `q`: n×n symmetric PSD, `r`: m×m symmetric PSD.
    pub fn new(
        f: Matrix<T>,
        b: Matrix<T>,
        h: Matrix<T>,
        q: Matrix<T>,
        r: Matrix<T>,
    ) -> Result<Self, CompressionError> {
        let n = f.rows();
        let m = h.rows();
        expect_shape("F", &f, (n, n))?;
        expect_shape("B", &b, (n, b.cols()))?;
        expect_shape("H", &h, (m, n))?;
        expect_shape("Q", &q, (n, n))?;
        expect_shape("R", &r, (m, m))?;
        check_covariance("Q", &q)?;
        check_covariance("R", &r)?;
        Ok(Self { f, b, h, q, r })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.f.rows()
    }

    /// Observation dimension.
    pub fn m(&self) -> usize {
        self.h.rows()
    }

    /// Control dimension.
    pub fn k(&self) -> usize {
        self.b.cols()
    }

    pub fn f(&self) -> &Matrix<T> {
        &self.f
    }
    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }
    pub fn h(&self) -> &Matrix<T> {
        &self.h
    }
    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }
    pub fn r(&self) -> &Matrix<T> {
        &self.r
    }
}

/// Estimate `x`, covariance `P` and the gain `K` of the most recent update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState<T> {
    pub x: Matrix<T>,
    pub p: Matrix<T>,
    pub k: Matrix<T>,
}

impl<T: Real> FilterState<T> {
    /// Fresh state for `model` with a zero gain.
    pub fn new(model: &KalmanModel<T>, x: &[T], p: Matrix<T>) -> Result<Self, CompressionError> {
        let n = model.n();
        if x.len() != n {
            return Err(CompressionError::Dimension { what: "x", expected: (n, 1), found: (x.len(), 1) });
        }
        expect_shape("P", &p, (n, n))?;
        check_covariance("P", &p)?;
        Ok(Self { x: Matrix::column(x), p, k: Matrix::zeros(n, model.m()) })
    }

    pub fn estimate(&self) -> &[T] {
        self.x.as_slice()
    }

    /// P symmetric and PSD within `tol`.
    pub fn covariance_is_valid(&self, tol: T) -> bool {
        self.p.is_symmetric(tol) && self.p.is_positive_semidefinite(tol)
    }

    fn check_against(&self, model: &KalmanModel<T>) -> Result<(), CompressionError> {
        let n = model.n();
        expect_shape("x", &self.x, (n, 1))?;
        expect_shape("P", &self.p, (n, n))
    }
}

/// Time update: `x = F·x + B·u`, `P = F·P·Fᵀ + Q`, re-symmetrized.
pub fn kf_predict<T: Real>(
    model: &KalmanModel<T>,
    state: &FilterState<T>,
    u: &[T],
) -> Result<FilterState<T>, CompressionError> {
    state.check_against(model)?;
    if u.len() != model.k() {
        return Err(CompressionError::Dimension { what: "u", expected: (model.k(), 1), found: (u.len(), 1) });
    }
    let u = Matrix::column(u);
    let x = &(&model.f * &state.x) + &(&model.b * &u);
    let p = &(&(&model.f * &state.p) * &model.f.transpose()) + &model.q;
    Ok(FilterState { x, p: p.symmetrized(), k: state.k.clone() })
}

/// `z − H·x` for a predicted state.
pub fn innovation<T: Real>(
    model: &KalmanModel<T>,
    predicted: &FilterState<T>,
    z: &[T],
) -> Result<Vec<T>, CompressionError> {
    predicted.check_against(model)?;
    if z.len() != model.m() {
        return Err(CompressionError::Dimension { what: "z", expected: (model.m(), 1), found: (z.len(), 1) });
    }
    let hx = &model.h * &predicted.x;
    Ok(z.iter().zip(hx.as_slice()).map(|(&a, &b)| a - b).collect())
}

/// Measurement update with `K = P·Hᵀ·(H·P·Hᵀ + R)⁻¹`, `x = x + K·(z − H·x)`, `P = (I − K·H)·P`.
///
/// A singular innovation covariance is reported as an error; the caller keeps its prior state.
pub fn kf_update<T: Real>(
    model: &KalmanModel<T>,
    predicted: &FilterState<T>,
    z: &[T],
) -> Result<FilterState<T>, CompressionError> {
    let y = Matrix::column(&innovation(model, predicted, z)?);
    let ht = model.h.transpose();
    let pht = &predicted.p * &ht;
    let s = &(&model.h * &pht) + &model.r;
    let s_inv = s.try_inverse().ok_or(CompressionError::SingularInnovation)?;
    let k = &pht * &s_inv;
    let x = &predicted.x + &(&k * &y);
    let i_kh = &Matrix::identity(model.n()) - &(&k * &model.h);
    let p = (&i_kh * &predicted.p).symmetrized();
    Ok(FilterState { x, p, k })
}
