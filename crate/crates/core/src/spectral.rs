//! Thin SVD and the significant/trivial singular-value split.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `A = U diag(sigma) V^T` with `sigma` descending; `u` is `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma[self.sigma.len() - 1]
    }

    pub fn condition_number(&self) -> f64 {
        self.sigma_max() / self.sigma_min()
    }

    /// Squared singular values.
    pub fn s2(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

/// Thin SVD. The bidiagonal solver keeps tiny singular values at their
/// rounding level instead of flushing them to zero, which matters for the
/// characteristic function and for plain least squares.
pub fn compute_svd(a: &DMatrix<f64>) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    if n == 0 || m < n {
        return Err(Error::InvalidDimension(format!(
            "expected m >= n >= 1, got {m}x{n}"
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix);
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = fa.thin_svd().map_err(|_| Error::FactorizationFailed)?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| fs[j].abs().total_cmp(&fs[i].abs()));
    let sigma = DVector::from_iterator(n, order.iter().map(|&k| fs[k].abs()));
    // fold any negative sign into U
    let u = DMatrix::from_fn(m, n, |i, j| {
        let k = order[j];
        fu[(i, k)] * if fs[k] < 0.0 { -1.0 } else { 1.0 }
    });
    let v = DMatrix::from_fn(n, n, |i, j| fv[(i, order[j])]);
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailed);
    }
    Ok(SvdFactors { u, sigma, v })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPartition {
    pub n1: usize,
    pub n2: usize,
    pub threshold: f64,
    pub c: f64,
    pub beta: f64,
}

/// Modes with `sigma_i^2 >= c * mean(sigma^2)` are significant.
pub fn partition(svd: &SvdFactors, c: f64) -> Result<SpectralPartition> {
    partition_sigma(svd.sigma.as_slice(), c)
}

pub fn partition_sigma(sigma: &[f64], c: f64) -> Result<SpectralPartition> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidThresholdConstant(c));
    }
    let n = sigma.len();
    let mean = sigma.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let threshold = c * mean;
    let n1 = sigma.iter().filter(|&&s| s * s >= threshold).count().max(1);
    Ok(SpectralPartition {
        n1,
        n2: n - n1,
        threshold,
        c,
        beta: n as f64 / n1 as f64,
    })
}
