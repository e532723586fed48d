//! Oracle computations that need the true signal statistics: the exact MSE
//! curve of the regularized estimator, the worst-case model perturbation,
//! the perturbation-bound expressions, and the approximation error bounds.
//!
//! Nothing here feeds the selector in [`crate::copra`], which stays
//! prior-free.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::GammaGrid;
use crate::error::{Error, Result};
use crate::spectral::{SpectralPartition, SvdFactors};

/// Second-moment model of the true signal, `R = E[x0 x0^T]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// `sigma_x^2 I`.
    White(f64),
    /// A fixed signal, `R = x0 x0^T`.
    Deterministic(DVector<f64>),
    /// A general symmetric PSD matrix.
    Covariance(DMatrix<f64>),
}

impl Prior {
    pub fn dim(&self) -> Option<usize> {
        match self {
            Prior::White(_) => None,
            Prior::Deterministic(x) => Some(x.len()),
            Prior::Covariance(r) => Some(r.nrows()),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let ok = match self {
            Prior::White(s) => *s >= 0.0 && s.is_finite(),
            Prior::Deterministic(x) => x.len() == n && x.iter().all(|v| v.is_finite()),
            Prior::Covariance(r) => {
                r.shape() == (n, n)
                    && r.iter().all(|v| v.is_finite())
                    && (r - r.transpose()).abs().max() <= 1e-12 * r.abs().max()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCovariance)
        }
    }

    pub fn trace(&self, n: usize) -> f64 {
        match self {
            Prior::White(s) => s * n as f64,
            Prior::Deterministic(x) => x.norm_squared(),
            Prior::Covariance(r) => r.trace(),
        }
    }

    pub fn to_matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            Prior::White(s) => DMatrix::identity(n, n) * *s,
            Prior::Deterministic(x) => x * x.transpose(),
            Prior::Covariance(r) => r.clone(),
        }
    }

    /// `diag(V^T R V)`, one entry per right singular vector.
    pub fn projected_diagonal(&self, v: &DMatrix<f64>) -> Vec<f64> {
        match self {
            Prior::White(s) => vec![*s; v.ncols()],
            Prior::Deterministic(x) => (v.transpose() * x).iter().map(|c| c * c).collect(),
            Prior::Covariance(r) => {
                let rv = r * v;
                (0..v.ncols())
                    .map(|k| v.column(k).dot(&rv.column(k)))
                    .collect()
            }
        }
    }

    /// `(lambda_min, lambda_max, lambda_avg)` of `R`.
    pub fn eigen_extremes(&self, n: usize) -> (f64, f64, f64) {
        match self {
            Prior::White(s) => (*s, *s, *s),
            Prior::Deterministic(x) => {
                let e = x.norm_squared();
                let lo = if n > 1 { 0.0 } else { e };
                (lo, e, e / n as f64)
            }
            Prior::Covariance(r) => {
                let ev = r.clone().symmetric_eigenvalues();
                let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi, r.trace() / n as f64)
            }
        }
    }
}

impl From<DMatrix<f64>> for Prior {
    fn from(r: DMatrix<f64>) -> Self {
        Prior::Covariance(r)
    }
}

/// Exact spectral pieces of `MSE(rho)`.
struct MseTerms {
    s2: Vec<f64>,
    d: Vec<f64>,
    sigma_z2: f64,
    /// Signal energy outside the row space; the estimator never recovers it.
    unreachable: f64,
}

impl MseTerms {
    fn new(svd: &SvdFactors, prior: &Prior, sigma_z2: f64) -> Result<Self> {
        let n = svd.cols();
        prior.check(n)?;
        if !(sigma_z2 >= 0.0 && sigma_z2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_z2 = {sigma_z2} must be >= 0"
            )));
        }
        let d = prior.projected_diagonal(&svd.v);
        let unreachable = (prior.trace(n) - d.iter().sum::<f64>()).max(0.0);
        let unreachable = if svd.v.ncols() == n { 0.0 } else { unreachable };
        Ok(MseTerms {
            s2: svd.s2(),
            d,
            sigma_z2,
            unreachable,
        })
    }

    fn value(&self, rho: f64) -> f64 {
        let mut acc = self.unreachable;
        for (&s, &d) in self.s2.iter().zip(&self.d) {
            let q = s + rho;
            if q == 0.0 {
                continue;
            }
            acc += (self.sigma_z2 * s + rho * rho * d) / (q * q);
        }
        acc
    }

    /// Half the derivative: `sum s (rho d - sigma_z^2) / (s + rho)^3`.
    fn half_slope(&self, rho: f64) -> f64 {
        self.s2
            .iter()
            .zip(&self.d)
            .filter(|(&s, _)| s > 0.0)
            .map(|(&s, &d)| s * (rho * d - self.sigma_z2) / (s + rho).powi(3))
            .sum()
    }
}

/// `MSE(rho) = sigma_z^2 Tr(S^2 (S^2 + rho)^-2) + rho^2 Tr((S^2 + rho)^-2 V^T R V)`.
pub fn mse_at(svd: &SvdFactors, prior: &Prior, sigma_z2: f64, rho: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::OutOfDomain(rho));
    }
    Ok(MseTerms::new(svd, prior, sigma_z2)?.value(rho))
}

/// `d MSE / d rho`.
pub fn mse_derivative(svd: &SvdFactors, prior: &Prior, sigma_z2: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::OutOfDomain(rho));
    }
    Ok(2.0 * MseTerms::new(svd, prior, sigma_z2)?.half_slope(rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    /// Ascending.
    pub gammas: Vec<f64>,
    pub mse: Vec<f64>,
    pub minimizer: f64,
    pub min_mse: f64,
    /// The minimum sat on the end of the grid.
    pub endpoint: bool,
}

impl MseCurve {
    /// Most negative second divided difference over `gammas <= up_to`,
    /// relative to the largest MSE value. Zero or positive means convex there.
    pub fn convexity_defect(&self, up_to: f64) -> f64 {
        let scale = self
            .mse
            .iter()
            .copied()
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let g = &self.gammas;
        let f = &self.mse;
        let mut worst = 0.0f64;
        for k in 1..g.len().saturating_sub(1) {
            if g[k + 1] > up_to {
                break;
            }
            let left = (f[k] - f[k - 1]) / (g[k] - g[k - 1]);
            let right = (f[k + 1] - f[k]) / (g[k + 1] - g[k]);
            // scaled by the local spacing so the check is dimensionless
            let dd = (right - left) * (g[k + 1] - g[k - 1]) / scale;
            worst = worst.min(dd);
        }
        worst
    }
}

/// Exact MSE over `grid` plus its minimizer.
///
/// The minimizer is refined from the best grid cell by bisection on the sign
/// of the analytic derivative, which resolves it to rounding level rather
/// than the square-root accuracy of a derivative-free search.
pub fn mse_oracle(
    svd: &SvdFactors,
    prior: &Prior,
    sigma_z2: f64,
    grid: &GammaGrid,
) -> Result<MseCurve> {
    let terms = MseTerms::new(svd, prior, sigma_z2)?;
    let mut gammas = grid.values.clone();
    gammas.sort_by(f64::total_cmp);
    if gammas.is_empty() || !(gammas[0] > 0.0) {
        return Err(Error::InvalidConfig(
            "MSE grid must be positive and non-empty".into(),
        ));
    }
    let mse: Vec<f64> = gammas.iter().map(|&g| terms.value(g)).collect();
    let k = mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let last = gammas.len() - 1;
    let lo = gammas[k.saturating_sub(1)];
    let hi = gammas[(k + 1).min(last)];
    let (mut minimizer, mut endpoint) = (gammas[k], k == 0 || k == last);
    if terms.half_slope(lo) < 0.0 && terms.half_slope(hi) > 0.0 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = (a * b).sqrt();
            if mid <= a || mid >= b {
                break;
            }
            if terms.half_slope(mid) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        minimizer = if terms.value(a) <= terms.value(b) {
            a
        } else {
            b
        };
        endpoint = false;
    }
    Ok(MseCurve {
        min_mse: terms.value(minimizer),
        gammas,
        mse,
        minimizer,
        endpoint,
    })
}

/// `n sigma_z^2 / Tr(R)`: the scalar regularizer that is MSE-optimal for a
/// white signal and approximately so otherwise.
pub fn suboptimal_rho(prior: &Prior, sigma_z2: f64, n: usize) -> Result<f64> {
    let tr = prior.trace(n);
    if !(tr > 0.0) || n == 0 {
        return Err(Error::DegenerateCovariance);
    }
    Ok(n as f64 * sigma_z2 / tr)
}

/// The rank-one perturbation `dA = delta (A x - y) x^T / (||A x - y|| ||x||)`
/// that attains the worst-case residual `||y - (A + dA) x|| = ||y - A x|| + delta ||x||`.
pub fn worst_case_perturbation(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    delta: f64,
) -> Result<DMatrix<f64>> {
    if a.ncols() != x.len() || a.nrows() != y.len() {
        return Err(Error::InvalidDimension(format!(
            "A is {}x{}, x has {}, y has {}",
            a.nrows(),
            a.ncols(),
            x.len(),
            y.len()
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "delta = {delta} must be >= 0"
        )));
    }
    let r = a * x - y;
    let (rn, xn) = (r.norm(), x.norm());
    if rn == 0.0 || xn == 0.0 {
        return Err(Error::Undefined);
    }
    Ok((r / rn) * (x / xn).transpose() * delta)
}

fn n1_sums(
    svd: &SvdFactors,
    part: &SpectralPartition,
    rho: f64,
    weight: impl Fn(f64, usize) -> f64,
) -> f64 {
    svd.s2()
        .iter()
        .take(part.n1)
        .enumerate()
        .map(|(i, &s)| weight(s, i) / (s + rho).powi(2))
        .sum()
}

/// Perturbation bound from the known noise level and signal statistics,
/// with the trivial modes dropped from the numerator and kept only as the
/// `n2 sigma_z^2 / rho^2` term in the denominator.
pub fn delta_bound_exact(
    rho: f64,
    svd: &SvdFactors,
    part: &SpectralPartition,
    prior: &Prior,
    sigma_z2: f64,
) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::OutOfDomain(rho));
    }
    prior.check(svd.cols())?;
    let d = prior.projected_diagonal(&svd.v);
    let num = n1_sums(svd, part, rho, |s, i| sigma_z2 * s + s * s * d[i]);
    let den = n1_sums(svd, part, rho, |s, i| sigma_z2 + s * d[i])
        + part.n2 as f64 * sigma_z2 / (rho * rho);
    Ok((num / den).sqrt())
}

/// Prior-free form of [`delta_bound_exact`], with `beta = n / n1`.
pub fn delta_bound_approx(rho: f64, svd: &SvdFactors, part: &SpectralPartition) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::OutOfDomain(rho));
    }
    let beta = part.beta;
    let num = n1_sums(svd, part, rho, |s, _| s * (beta * s + rho));
    let den = n1_sums(svd, part, rho, |s, _| beta * s + rho) + part.n2 as f64 / rho;
    Ok((num / den).sqrt())
}

/// Default upper SNR used for the high-SNR error bound.
pub const SNR_MAX_DB: f64 = 40.0;

/// Bounds on the error made by replacing `V^T R V` with `Tr(R)/n I` in the
/// MSE, with `H = (S^2 + rho I)^-2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub rho: f64,
    /// Signal-side bound; `None` when no prior was supplied.
    pub mu_x: Option<f64>,
    /// Operator-side bound at `rho`.
    pub mu_a: f64,
    /// `min(mu_x, mu_a)`, or `mu_a` alone without a prior.
    pub mu: f64,
    /// `sigma_{n1}^2 / SNR_max`.
    pub rho_min_lower: f64,
    /// `mu_a` evaluated at `rho_min_lower`.
    pub mu_a_high_snr: f64,
    /// Actual normalized error, when the prior is known.
    pub epsilon: Option<f64>,
}

fn h_diag(s2: &[f64], rho: f64) -> impl Iterator<Item = f64> + '_ {
    s2.iter().map(move |&s| 1.0 / (s + rho).powi(2))
}

/// `max(1 - h_min / h_avg, h_max / h_avg - 1)` for `h_i = 1 / (sigma_i^2 + rho)^2`.
pub fn mu_a(s2: &[f64], rho: f64) -> f64 {
    let n = s2.len() as f64;
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, 0.0f64, 0.0);
    for h in h_diag(s2, rho) {
        lo = lo.min(h);
        hi = hi.max(h);
        sum += h;
    }
    let avg = sum / n;
    (1.0 - lo / avg).max(hi / avg - 1.0).max(0.0)
}

/// `max(1 - lambda_min / lambda_avg, lambda_max / lambda_avg - 1)` of `R`.
pub fn mu_x(prior: &Prior, n: usize) -> Result<f64> {
    prior.check(n)?;
    let (lo, hi, avg) = prior.eigen_extremes(n);
    if !(avg > 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    Ok((1.0 - lo / avg).max(hi / avg - 1.0).max(0.0))
}

pub fn error_bounds(
    svd: &SvdFactors,
    part: &SpectralPartition,
    rho: f64,
    prior: Option<&Prior>,
    snr_max_db: f64,
) -> Result<ErrorBoundReport> {
    if !(rho > 0.0) {
        return Err(Error::OutOfDomain(rho));
    }
    let n = svd.cols();
    let s2 = svd.s2();
    let a = mu_a(&s2, rho);
    let sn1 = s2[part.n1.clamp(1, s2.len()) - 1];
    let rho_min_lower = sn1 / 10f64.powf(snr_max_db / 10.0);
    let (mx, epsilon) = match prior {
        Some(p) => {
            let mx = mu_x(p, n)?;
            let d = p.projected_diagonal(&svd.v);
            let exact: f64 = h_diag(&s2, rho).zip(&d).map(|(h, di)| h * di).sum();
            let approx = h_diag(&s2, rho).sum::<f64>() * p.trace(n) / n as f64;
            (Some(mx), Some((exact - approx) / approx))
        }
        None => (None, None),
    };
    Ok(ErrorBoundReport {
        rho,
        mu_x: mx,
        mu_a: a,
        mu: mx.map_or(a, |m| m.min(a)),
        rho_min_lower,
        mu_a_high_snr: if rho_min_lower > 0.0 {
            mu_a(&s2, rho_min_lower)
        } else {
            f64::NAN
        },
        epsilon,
    })
}
