//! Constrained-perturbation regularization: picks the Tikhonov parameter as the
//! positive root, beyond the near-zero ε root, of a scalar characteristic
//! function built from the spectrum and the projected observation.

mod characteristic;
pub mod newton;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Dd;
use crate::spectral::{partition_sigma, SpectralPartition, SvdFactors};

pub use characteristic::{
    characteristic_g, characteristic_g_prime, epsilon_root, root_condition, Characteristic,
    EpsilonRoot,
};
pub use newton::{newton_solve, FnRoot, NewtonOptions, NewtonOutcome, RootFunction};

/// Number of log-spaced points used to bracket the root before Newton.
pub const BRACKET_GRID_POINTS: usize = 64;
/// Upper end of the search interval, in units of `sigma_1^2`.
pub const RHO_MAX_REL: f64 = 1e15;
/// Default ε floor, in units of `sigma_1^2`.
pub const EPSILON_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopraConfig {
    pub c: f64,
    /// Relative tolerance: stop when `|G| <= xi * (G1 + G2)`.
    pub xi: f64,
    /// Absolute starting point; defaults to `10 * max(eps, floor)`.
    pub rho_init: Option<f64>,
    pub max_iter: usize,
    /// Absolute floor for ε; defaults to `1e-12 * sigma_1^2`.
    pub epsilon_floor: Option<f64>,
}

impl Default for CopraConfig {
    fn default() -> Self {
        CopraConfig {
            c: 0.1,
            xi: 1e-9,
            rho_init: None,
            max_iter: 100,
            epsilon_floor: None,
        }
    }
}

impl CopraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidThresholdConstant(self.c));
        }
        let positive = |v: Option<f64>| v.is_none_or(|x| x > 0.0 && x.is_finite());
        if !(self.xi > 0.0)
            || self.max_iter == 0
            || !positive(self.rho_init)
            || !positive(self.epsilon_floor)
        {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    NewtonRoot,
    EpsilonFallback,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::NewtonRoot => "newton-root",
            Branch::EpsilonFallback => "epsilon-fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopraResult {
    pub rho: f64,
    pub branch: Branch,
    pub iters: usize,
    pub g_residual: f64,
    pub condition_satisfied: bool,
    /// `rho ||x_hat|| / ||y - A x_hat||`; absent when the residual vanishes.
    pub delta: Option<f64>,
    pub x_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

/// `b = U^T y`, with compensated dot products.
pub fn projected_observation(svd: &SvdFactors, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != svd.rows() {
        return Err(Error::InvalidDimension(format!(
            "observation has length {}, operator has {} rows",
            y.len(),
            svd.rows()
        )));
    }
    Ok(DVector::from_fn(svd.cols(), |i, _| {
        Dd::dot(svd.u.column(i).iter().zip(y.iter())).to_f64()
    }))
}

/// `x = V diag(sigma / (sigma^2 + rho)) b` for a precomputed `b = U^T y`.
pub fn rls_from_projection(svd: &SvdFactors, b: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    if !(rho >= 0.0) {
        return Err(Error::OutOfDomain(rho));
    }
    if rho == 0.0 && svd.sigma_min() == 0.0 {
        return Err(Error::SingularSystem);
    }
    let coef = DVector::from_fn(svd.cols(), |i, _| {
        let s = svd.sigma[i];
        let d = s * s + rho;
        if d == 0.0 {
            0.0
        } else {
            s / d * b[i]
        }
    });
    Ok(&svd.v * coef)
}

/// `(A^T A + rho I)^-1 A^T y` through the SVD.
pub fn rls_solve(svd: &SvdFactors, y: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    let b = projected_observation(svd, y)?;
    rls_from_projection(svd, &b, rho)
}

/// `||y - A x_rho||^2` from the spectral data, without forming `A`.
pub fn residual_norm2(svd: &SvdFactors, y_norm2: f64, b: &DVector<f64>, rho: f64) -> f64 {
    let out_of_range = (y_norm2 - b.norm_squared()).max(0.0);
    let in_range: f64 = svd
        .sigma
        .iter()
        .zip(b.iter())
        .map(|(s, bi)| {
            let d = s * s + rho;
            let f = if d == 0.0 { 1.0 } else { rho / d };
            (f * bi).powi(2)
        })
        .sum();
    out_of_range + in_range
}

/// Outcome of the parameter search alone, before forming the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub rho: f64,
    pub branch: Branch,
    pub iters: usize,
    pub g_residual: f64,
    pub condition_satisfied: bool,
    pub epsilon: f64,
    pub partition: SpectralPartition,
    pub fallback_reason: Option<String>,
}

/// Last `- -> +` sign change of `G` on a log grid over `[lo, hi]` (normalized units).
pub fn bracket_root(ch: &Characteristic, lo: f64, hi: f64, points: usize) -> Option<(f64, f64)> {
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    let mut found = None;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..points {
        let r = if k + 1 == points {
            hi
        } else {
            lo * (ratio * k as f64).exp()
        };
        let g = ch.g_norm(r);
        if let Some((pr, pg)) = prev {
            if pg < 0.0 && g > 0.0 {
                found = Some((pr, r));
            }
        }
        // exact zeros are skipped so a root on a node still shows as a change
        if g != 0.0 {
            prev = Some((r, g));
        }
    }
    found
}

/// Chooses `rho` from the spectrum and `b = U^T y`.
pub fn select(sigma: &[f64], b: &[f64], cfg: &CopraConfig) -> Result<Selection> {
    cfg.validate()?;
    let part = partition_sigma(sigma, cfg.c)?;
    let ch = Characteristic::new(sigma, &part, b);
    let unit = sigma[0] * sigma[0];
    if unit == 0.0 {
        return Err(Error::SingularSystem);
    }
    let floor = cfg.epsilon_floor.unwrap_or(EPSILON_FLOOR_REL * unit);
    let epsilon = match epsilon_root(sigma, &part, b, floor) {
        Ok(e) => e.value,
        Err(Error::NotApplicable) => floor,
        Err(e) => return Err(e),
    };
    let condition = root_condition(sigma, &part, b);
    let fallback = |reason: Option<&str>| Selection {
        rho: epsilon,
        branch: Branch::EpsilonFallback,
        iters: 0,
        g_residual: ch.g(epsilon).abs(),
        condition_satisfied: condition,
        epsilon,
        partition: part,
        fallback_reason: reason.map(str::to_string),
    };
    if !condition {
        return Ok(fallback(None));
    }
    let r0 = cfg.rho_init.unwrap_or(10.0 * epsilon) / unit;
    let Some((lo, hi)) = bracket_root(&ch, r0, RHO_MAX_REL, BRACKET_GRID_POINTS) else {
        return Ok(fallback(Some("no-sign-change")));
    };
    let opts = NewtonOptions {
        x_init: r0,
        xi: cfg.xi,
        max_iter: cfg.max_iter,
        lower: 0.0,
        upper: RHO_MAX_REL,
        bracket: Some((lo, hi)),
    };
    match newton_solve(&ch, &opts) {
        Ok(out) => Ok(Selection {
            rho: out.x * unit,
            branch: Branch::NewtonRoot,
            iters: out.iters,
            g_residual: out.residual * ch.g_unit(),
            condition_satisfied: true,
            epsilon,
            partition: part,
            fallback_reason: None,
        }),
        Err(Error::NoConvergence { .. }) => Ok(fallback(Some("no-convergence"))),
        Err(Error::DerivativeVanished(_)) => Ok(fallback(Some("derivative-vanished"))),
        Err(e) => Err(e),
    }
}

/// Full estimator: parameter choice, regularized solution and implied δ.
pub fn estimate(svd: &SvdFactors, y: &DVector<f64>, cfg: &CopraConfig) -> Result<CopraResult> {
    let b = projected_observation(svd, y)?;
    let sel = select(svd.sigma.as_slice(), b.as_slice(), cfg)?;
    let x_hat = rls_from_projection(svd, &b, sel.rho)?;
    let res = residual_norm2(svd, y.norm_squared(), &b, sel.rho).sqrt();
    let delta = (res > 0.0).then(|| sel.rho * x_hat.norm() / res);
    Ok(CopraResult {
        rho: sel.rho,
        branch: sel.branch,
        iters: sel.iters,
        g_residual: sel.g_residual,
        condition_satisfied: sel.condition_satisfied,
        delta,
        x_hat: x_hat.iter().copied().collect(),
        fallback_reason: sel.fallback_reason,
    })
}
