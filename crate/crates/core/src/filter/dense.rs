//! Textbook linear Kalman filter on dense matrices.

use nalgebra::{DMatrix, DVector};

use super::FilterError;

/// `x' = F·x + B·u + w`, `z = H·x + v`, `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenericKalman {
    pub f: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl GenericKalman {
    pub fn predict(&self, prev: &DenseEstimate, u: &DVector<f64>, q: &DMatrix<f64>) -> DenseEstimate {
        let mean = &self.f * &prev.mean + &self.b * u;
        let cov = symmetrize(&(&self.f * &prev.cov * self.f.transpose() + q));
        DenseEstimate { mean, cov }
    }

    /// `K = P·Hᵀ(H·P·Hᵀ + R)⁻¹`, `x̂ = x + K(z − H·x)`, `P̂ = (I − K·H)·P`.
    pub fn update(&self, pred: &DenseEstimate, z: &DVector<f64>, r: &DMatrix<f64>) -> Result<DenseEstimate, FilterError> {
        let s = &self.h * &pred.cov * self.h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| FilterError::Singular("innovation covariance".into()))?;
        let k = &pred.cov * self.h.transpose() * s_inv;
        let mean = &pred.mean + &k * (z - &self.h * &pred.mean);
        let n = pred.cov.nrows();
        let cov = symmetrize(&((DMatrix::identity(n, n) - &k * &self.h) * &pred.cov));
        Ok(DenseEstimate { mean, cov })
    }
}
