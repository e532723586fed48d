//! Reference selectors: ordinary least squares, GCV, L-curve, quasi-optimality
//! and the LMMSE oracle. All of them feed the same spectral RLS solve.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::copra::{projected_observation, residual_norm2, rls_from_projection, rls_solve};
use crate::error::{Error, Result};
use crate::spectral::SvdFactors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodId {
    Ols,
    Gcv,
    Lcurve,
    Quasiopt,
    Lmmse,
    Copra,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Copra,
        MethodId::Gcv,
        MethodId::Lcurve,
        MethodId::Quasiopt,
        MethodId::Ols,
        MethodId::Lmmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodId::Ols => "ols",
            MethodId::Gcv => "gcv",
            MethodId::Lcurve => "lcurve",
            MethodId::Quasiopt => "quasiopt",
            MethodId::Lmmse => "lmmse",
            MethodId::Copra => "copra",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        MethodId::ALL
            .into_iter()
            .find(|m| {
                m.name() == key
                    || (key == "quasi" && *m == MethodId::Quasiopt)
                    || (key == "ls" && *m == MethodId::Ols)
            })
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// Log-spaced candidate parameters, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub values: Vec<f64>,
}

impl GammaGrid {
    pub const DEFAULT_COUNT: usize = 200;
    pub const SPAN_DECADES: f64 = 16.0;

    /// `count` points from `top` down to `top * 1e-16`.
    pub fn new(top: f64, count: usize) -> Result<Self> {
        if count < 16 || !(top > 0.0 && top.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid needs count >= 16 and a positive top, got {count} and {top}"
            )));
        }
        let step = Self::SPAN_DECADES / (count - 1) as f64;
        let values = (0..count)
            .map(|k| top * 10f64.powf(-step * k as f64))
            .collect();
        Ok(GammaGrid { values })
    }

    pub fn for_svd(svd: &SvdFactors) -> Result<Self> {
        let top = svd.sigma_max().powi(2);
        Self::new(if top > 0.0 { top } else { 1.0 }, Self::DEFAULT_COUNT)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: MethodId,
    pub gamma: f64,
    /// The optimum sat on the first or last grid point.
    pub endpoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsSolution {
    pub x: DVector<f64>,
    /// Singular values below `1e-14 sigma_1` were dropped.
    pub pseudo_inverse: bool,
}

pub const PINV_CUTOFF_REL: f64 = 1e-14;

/// `V Sigma^-1 U^T y`; falls back to a truncated pseudo-inverse only when the
/// factorization reports an exactly zero singular value.
pub fn ols_solve(svd: &SvdFactors, y: &DVector<f64>) -> Result<OlsSolution> {
    let b = projected_observation(svd, y)?;
    let pinv = svd.sigma_min() == 0.0;
    let cutoff = if pinv {
        PINV_CUTOFF_REL * svd.sigma_max()
    } else {
        0.0
    };
    let coef = DVector::from_fn(svd.cols(), |i, _| {
        let s = svd.sigma[i];
        if s > cutoff {
            b[i] / s
        } else {
            0.0
        }
    });
    Ok(OlsSolution {
        x: &svd.v * coef,
        pseudo_inverse: pinv,
    })
}

/// Spectral data shared by the grid selectors.
struct Spectral<'a> {
    s: Vec<f64>,
    b: &'a [f64],
    out_of_range: f64,
    m: f64,
}

impl<'a> Spectral<'a> {
    fn new(svd: &SvdFactors, y_norm2: f64, b: &'a DVector<f64>) -> Self {
        Spectral {
            s: svd.s2(),
            b: b.as_slice(),
            out_of_range: (y_norm2 - b.norm_squared()).max(0.0),
            m: svd.rows() as f64,
        }
    }

    fn gcv(&self, g: f64) -> f64 {
        let mut res = self.out_of_range;
        let mut trace = self.m;
        for (&s, &b) in self.s.iter().zip(self.b) {
            let d = s + g;
            res += (g / d * b).powi(2);
            trace -= s / d;
        }
        let v = self.m * res / (trace * trace);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Signed curvature of `(log ||r||, log ||x||)` with `log gamma` as parameter.
    fn curvature(&self, g: f64) -> f64 {
        let (mut eta, mut d_eta, mut dd_eta) = (0.0, 0.0, 0.0);
        let (mut rho, mut d_rho, mut dd_rho) = (self.out_of_range, 0.0, 0.0);
        for (&s, &b) in self.s.iter().zip(self.b) {
            let q = 1.0 / (s + g);
            let sb = s * b * b;
            let q2 = q * q;
            eta += sb * q2;
            d_eta -= 2.0 * sb * q2 * q;
            dd_eta += 6.0 * sb * q2 * q2;
            rho += (g * b * q).powi(2);
            d_rho += 2.0 * g * sb * q2 * q;
            dd_rho += 2.0 * sb * (s - 2.0 * g) * q2 * q2;
        }
        // half-logs and their derivatives in t = ln g
        let dx_dg = d_rho / (2.0 * rho);
        let ddx_dg = (dd_rho * rho - d_rho * d_rho) / (2.0 * rho * rho);
        let dy_dg = d_eta / (2.0 * eta);
        let ddy_dg = (dd_eta * eta - d_eta * d_eta) / (2.0 * eta * eta);
        let x1 = g * dx_dg;
        let x2 = g * dx_dg + g * g * ddx_dg;
        let y1 = g * dy_dg;
        let y2 = g * dy_dg + g * g * ddy_dg;
        let k = (x1 * y2 - x2 * y1) / (x1 * x1 + y1 * y1).powf(1.5);
        if k.is_finite() {
            k
        } else {
            f64::NEG_INFINITY
        }
    }

    fn quasi(&self, g: f64) -> f64 {
        self.s
            .iter()
            .zip(self.b)
            .map(|(&s, &b)| {
                let d = s + g;
                (g * s.sqrt() * b / (d * d)).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn argbest(grid: &GammaGrid, f: impl Fn(f64) -> f64, maximize: bool) -> (usize, f64) {
    let mut best = (
        0,
        if maximize {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        },
    );
    for (k, &g) in grid.values.iter().enumerate() {
        let v = f(g);
        let better = if maximize { v > best.1 } else { v < best.1 };
        if better {
            best = (k, v);
        }
    }
    best
}

/// Golden-section minimization of `f` over `ln g` in `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c.exp());
    let mut fd = f(d.exp());
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d.exp());
        }
    }
    (0.5 * (a + b)).exp()
}

pub fn gcv_function(svd: &SvdFactors, y: &DVector<f64>, gamma: f64) -> Result<f64> {
    let b = projected_observation(svd, y)?;
    Ok(Spectral::new(svd, y.norm_squared(), &b).gcv(gamma))
}

pub fn lcurve_curvature(svd: &SvdFactors, y: &DVector<f64>, gamma: f64) -> Result<f64> {
    let b = projected_observation(svd, y)?;
    Ok(Spectral::new(svd, y.norm_squared(), &b).curvature(gamma))
}

pub fn quasi_function(svd: &SvdFactors, y: &DVector<f64>, gamma: f64) -> Result<f64> {
    let b = projected_observation(svd, y)?;
    Ok(Spectral::new(svd, y.norm_squared(), &b).quasi(gamma))
}

/// Selection from a precomputed `b = U^T y` and `||y||^2`.
pub fn select_from_projection(
    method: MethodId,
    svd: &SvdFactors,
    b: &DVector<f64>,
    y_norm2: f64,
    grid: &GammaGrid,
) -> Result<Selection> {
    let sp = Spectral::new(svd, y_norm2, b);
    let last = grid.len() - 1;
    let (k, gamma) = match method {
        MethodId::Gcv => {
            let (k, _) = argbest(grid, |g| sp.gcv(g), false);
            let hi = grid.values[k.saturating_sub(1)];
            let lo = grid.values[(k + 1).min(last)];
            let g = golden_min(|g| sp.gcv(g), lo, hi, 40);
            // keep the grid point if refinement did not help
            let g = if sp.gcv(g) <= sp.gcv(grid.values[k]) {
                g
            } else {
                grid.values[k]
            };
            (k, g)
        }
        MethodId::Lcurve => {
            let (k, kappa) = argbest(grid, |g| sp.curvature(g), true);
            if !(kappa > 0.0) {
                return Err(Error::NoCorner);
            }
            (k, grid.values[k])
        }
        MethodId::Quasiopt => {
            let (k, _) = argbest(grid, |g| sp.quasi(g), false);
            (k, grid.values[k])
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "{other} is not a grid selector"
            )))
        }
    };
    Ok(Selection {
        method,
        gamma,
        endpoint: k == 0 || k == last,
    })
}

pub fn gcv_select(svd: &SvdFactors, y: &DVector<f64>, grid: &GammaGrid) -> Result<Selection> {
    let b = projected_observation(svd, y)?;
    select_from_projection(MethodId::Gcv, svd, &b, y.norm_squared(), grid)
}

pub fn lcurve_select(svd: &SvdFactors, y: &DVector<f64>, grid: &GammaGrid) -> Result<Selection> {
    let b = projected_observation(svd, y)?;
    select_from_projection(MethodId::Lcurve, svd, &b, y.norm_squared(), grid)
}

pub fn quasiopt_select(svd: &SvdFactors, y: &DVector<f64>, grid: &GammaGrid) -> Result<Selection> {
    let b = projected_observation(svd, y)?;
    select_from_projection(MethodId::Quasiopt, svd, &b, y.norm_squared(), grid)
}

/// Final estimate for a grid selection.
pub fn estimate_with(svd: &SvdFactors, y: &DVector<f64>, sel: &Selection) -> Result<DVector<f64>> {
    rls_solve(svd, y, sel.gamma)
}

/// `sigma^2` if `r` is exactly `sigma^2 I`.
fn scalar_identity(r: &DMatrix<f64>) -> Option<f64> {
    let d = r[(0, 0)];
    let ok = r.iter().enumerate().all(|(k, &v)| {
        if k % (r.nrows() + 1) == 0 {
            v == d
        } else {
            v == 0.0
        }
    });
    ok.then_some(d)
}

/// `(A^T A + sigma_z^2 R^-1)^-1 A^T y` with the true prior covariance.
pub fn lmmse_oracle(
    svd: &SvdFactors,
    y: &DVector<f64>,
    r_x0: &DMatrix<f64>,
    sigma_z2: f64,
) -> Result<DVector<f64>> {
    let n = svd.cols();
    if r_x0.shape() != (n, n) || !(sigma_z2 >= 0.0) {
        return Err(Error::InvalidCovariance);
    }
    if let Some(sx2) = scalar_identity(r_x0) {
        if !(sx2 > 0.0) {
            return Err(Error::InvalidCovariance);
        }
        return rls_solve(svd, y, sigma_z2 / sx2);
    }
    if (r_x0 - r_x0.transpose()).abs().max() > 1e-12 * r_x0.abs().max() {
        return Err(Error::InvalidCovariance);
    }
    let r_inv = r_x0
        .clone()
        .cholesky()
        .ok_or(Error::InvalidCovariance)?
        .inverse();
    let b = projected_observation(svd, y)?;
    let s2 = DVector::from_iterator(n, svd.s2());
    let vs = &svd.v * DMatrix::from_diagonal(&s2);
    let gram = vs * svd.v.transpose();
    let rhs = &svd.v * svd.sigma.component_mul(&b);
    let lhs = gram + r_inv * sigma_z2;
    let chol = lhs.cholesky().ok_or(Error::SingularSystem)?;
    Ok(chol.solve(&rhs))
}

/// `R A^T (A R A^T + sigma_z^2 I)^-1 y`, the same estimator written so that a
/// singular `R` (for instance `x0 x0^T`) is allowed when `sigma_z^2 > 0`.
pub fn lmmse_data_space(
    a: &DMatrix<f64>,
    r_x0: &DMatrix<f64>,
    sigma_z2: f64,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if r_x0.shape() != (n, n) || !(sigma_z2 >= 0.0) {
        return Err(Error::InvalidCovariance);
    }
    if y.len() != m {
        return Err(Error::InvalidDimension(format!(
            "y has {} entries, A has {m} rows",
            y.len()
        )));
    }
    let rat = r_x0 * a.transpose();
    let mut gram = a * &rat;
    for i in 0..m {
        gram[(i, i)] += sigma_z2;
    }
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    Ok(rat * chol.solve(y))
}

/// Residual of the RLS estimate at `gamma`, used by diagnostics.
pub fn residual_at(svd: &SvdFactors, y: &DVector<f64>, gamma: f64) -> Result<f64> {
    let b = projected_observation(svd, y)?;
    Ok(residual_norm2(svd, y.norm_squared(), &b, gamma).sqrt())
}

/// RLS estimate from a precomputed projection.
pub fn solve_projected(svd: &SvdFactors, b: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    rls_from_projection(svd, b, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::compute_svd;

    fn diag(d: &[f64]) -> SvdFactors {
        compute_svd(&DMatrix::from_diagonal(&DVector::from_column_slice(d))).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.name().parse::<MethodId>().unwrap(), m);
        }
        assert_eq!("Quasi-Opt".parse::<MethodId>().unwrap(), MethodId::Quasiopt);
        assert!("tsvd".parse::<MethodId>().is_err());
    }

    #[test]
    fn grid_shape() {
        let g = GammaGrid::new(4.0, 200).unwrap();
        assert_eq!(g.values[0], 4.0);
        assert!((g.values[199] / 4e-16 - 1.0).abs() < 1e-12);
        assert!(g.values.windows(2).all(|w| w[1] < w[0]));
        assert!(GammaGrid::new(1.0, 15).is_err());
    }

    #[test]
    fn ols_examples() {
        let svd = diag(&[2.0, 4.0]);
        let x = ols_solve(&svd, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert!((x.x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-15);
        assert!(!x.pseudo_inverse);
        let svd = diag(&[1.0, 0.0]);
        let x = ols_solve(&svd, &DVector::from_vec(vec![3.0, 5.0])).unwrap();
        assert!(x.pseudo_inverse);
        assert!((x.x - DVector::from_vec(vec![3.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn noise_free_gcv_goes_small() {
        let a = DMatrix::from_fn(5, 3, |i, j| {
            if i == j {
                3.0 - j as f64
            } else {
                0.1 * (i + j) as f64
            }
        });
        let svd = compute_svd(&a).unwrap();
        let y = &a * DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let grid = GammaGrid::for_svd(&svd).unwrap();
        let sel = gcv_select(&svd, &y, &grid).unwrap();
        assert!(sel.gamma <= grid.values[grid.len() - 2]);
    }

    #[test]
    fn single_mode_has_no_corner() {
        let svd = diag(&[2.0]);
        let y = DVector::from_vec(vec![1.0]);
        let grid = GammaGrid::for_svd(&svd).unwrap();
        assert_eq!(lcurve_select(&svd, &y, &grid), Err(Error::NoCorner));
    }

    #[test]
    fn single_mode_quasi_hits_endpoint() {
        let svd = diag(&[2.0]);
        let y = DVector::from_vec(vec![1.0]);
        let grid = GammaGrid::for_svd(&svd).unwrap();
        let sel = quasiopt_select(&svd, &y, &grid).unwrap();
        assert!(sel.endpoint);
    }

    #[test]
    fn lmmse_white_prior_matches_rls() {
        let a = DMatrix::from_fn(4, 4, |i, j| 1.0 / (i + j + 1) as f64);
        let svd = compute_svd(&a).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.5, -0.25, 2.0]);
        let x = lmmse_oracle(&svd, &y, &DMatrix::identity(4, 4), 1.0).unwrap();
        assert_eq!(x, rls_solve(&svd, &y, 1.0).unwrap());
        let x = lmmse_oracle(&svd, &y, &(DMatrix::identity(4, 4) * 2.0), 1.0).unwrap();
        assert_eq!(x, rls_solve(&svd, &y, 0.5).unwrap());
    }

    #[test]
    fn lmmse_rejects_indefinite() {
        let svd = diag(&[1.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(
            lmmse_oracle(&svd, &y, &r, 1.0),
            Err(Error::InvalidCovariance)
        );
        assert_eq!(
            lmmse_oracle(&svd, &y, &DMatrix::zeros(2, 2), 1.0),
            Err(Error::InvalidCovariance)
        );
    }

    #[test]
    fn data_space_form_matches_parameter_space() {
        let a = DMatrix::from_fn(4, 4, |i, j| 1.0 / (i + j + 1) as f64);
        let svd = compute_svd(&a).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.5, -0.25, 2.0]);
        let r = DMatrix::from_fn(4, 4, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let x1 = lmmse_oracle(&svd, &y, &r, 0.1).unwrap();
        let x2 = lmmse_data_space(&a, &r, 0.1, &y).unwrap();
        assert!((x1 - x2).norm() < 1e-9);
    }
}
