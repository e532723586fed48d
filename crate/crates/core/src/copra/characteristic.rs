//! The characteristic function `G(rho) = G1(rho) - G2(rho)` and its ε root.
//!
//! With `s_i = sigma_i^2`, `w_i = b_i^2` and sums over `j` restricted to the
//! `n1` significant modes:
//!
//! ```text
//! G1 = S1 * T1,  S1 = sum_i s_i w_i / (s_i + rho)^2,  T1 = sum_j (beta s_j + rho) / (s_j + rho)^2 + n2 / rho
//! G2 = S2 * T2,  S2 = sum_i w_i / (s_i + rho)^2,      T2 = sum_j s_j (beta s_j + rho) / (s_j + rho)^2
//! ```
//!
//! When every mode is significant (`n2 = 0`, `beta = 1`) the `T` sums collapse to
//! `sum 1/(s + rho)` and `sum s/(s + rho)`, which is what gets evaluated.
//!
//! Everything runs on a normalized problem (`s / sigma_1^2`, `w / ||b||^2`,
//! `rho / sigma_1^2`); `G` itself scales by `||b||^2 / sigma_1^4`.

use crate::error::{Error, Result};
use crate::numeric::Dd;
use crate::spectral::SpectralPartition;

use super::newton::RootFunction;

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    s1: f64,
    t1: f64,
    s2: f64,
    t2: f64,
    ds1: f64,
    dt1: f64,
    ds2: f64,
    dt2: f64,
}

/// Precomputed normalized data for repeated evaluation of `G`.
#[derive(Debug, Clone)]
pub struct Characteristic {
    s: Vec<f64>,
    w: Vec<f64>,
    n1: usize,
    n2: usize,
    beta: f64,
    rho_unit: f64,
    g_unit: f64,
}

impl Characteristic {
    pub fn new(sigma: &[f64], part: &SpectralPartition, b: &[f64]) -> Self {
        let sigma_max = sigma.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let b_norm2: f64 = b.iter().map(|v| v * v).sum();
        let (s, w, rho_unit, g_unit) = if sigma_max == 0.0 || b_norm2 == 0.0 {
            (vec![1.0; sigma.len()], vec![0.0; b.len()], 1.0, 0.0)
        } else {
            let s = sigma.iter().map(|v| (v / sigma_max).powi(2)).collect();
            let w = b.iter().map(|v| v * v / b_norm2).collect();
            let s1 = sigma_max * sigma_max;
            (s, w, s1, b_norm2 / s1 / s1)
        };
        Characteristic {
            s,
            w,
            n1: part.n1,
            n2: part.n2,
            beta: part.beta,
            rho_unit,
            g_unit,
        }
    }

    /// `sigma_1^2`: the unit of the normalized regularizer.
    pub fn rho_unit(&self) -> f64 {
        self.rho_unit
    }

    /// Factor converting normalized `G` to absolute units.
    pub fn g_unit(&self) -> f64 {
        self.g_unit
    }

    fn sums(&self, r: f64, with_derivative: bool) -> Sums {
        let mut out = Sums::default();
        for (&s, &w) in self.s.iter().zip(&self.w) {
            let q = 1.0 / (s + r);
            let q2 = q * q;
            out.s1 += s * w * q2;
            out.s2 += w * q2;
            if with_derivative {
                out.ds1 -= 2.0 * s * w * q2 * q;
                out.ds2 -= 2.0 * w * q2 * q;
            }
        }
        if self.n2 == 0 {
            for &s in &self.s[..self.n1] {
                let q = 1.0 / (s + r);
                out.t1 += q;
                out.t2 += s * q;
                if with_derivative {
                    out.dt1 -= q * q;
                    out.dt2 -= s * q * q;
                }
            }
        } else {
            let beta = self.beta;
            for &s in &self.s[..self.n1] {
                let q = 1.0 / (s + r);
                let q2 = q * q;
                let num = beta * s + r;
                out.t1 += num * q2;
                out.t2 += s * num * q2;
                if with_derivative {
                    // d/dr (beta s + r)/(s + r)^2 = -((2 beta - 1) s + r)/(s + r)^3
                    let d = ((2.0 * beta - 1.0) * s + r) * q2 * q;
                    out.dt1 -= d;
                    out.dt2 -= s * d;
                }
            }
            let n2 = self.n2 as f64;
            out.t1 += n2 / r;
            if with_derivative {
                out.dt1 -= n2 / (r * r);
            }
        }
        out
    }

    /// Normalized `G` at normalized `r`.
    pub fn g_norm(&self, r: f64) -> f64 {
        let t = self.sums(r, false);
        (Dd::prod(t.s1, t.t1) - Dd::prod(t.s2, t.t2)).to_f64()
    }

    pub fn g_prime_norm(&self, r: f64) -> f64 {
        let t = self.sums(r, true);
        let pos = Dd::prod(t.ds1, t.t1) + Dd::prod(t.s1, t.dt1);
        let neg = Dd::prod(t.ds2, t.t2) + Dd::prod(t.s2, t.dt2);
        (pos - neg).to_f64()
    }

    /// `G1 + G2`, the magnitude against which `|G|` is judged.
    pub fn scale_norm(&self, r: f64) -> f64 {
        let t = self.sums(r, false);
        t.s1 * t.t1 + t.s2 * t.t2
    }

    /// `(G1, G2)` in normalized units.
    pub fn parts_norm(&self, r: f64) -> (f64, f64) {
        let t = self.sums(r, false);
        (t.s1 * t.t1, t.s2 * t.t2)
    }

    pub fn g(&self, rho: f64) -> f64 {
        self.g_unit * self.g_norm(rho / self.rho_unit)
    }

    pub fn g_prime(&self, rho: f64) -> f64 {
        self.g_unit / self.rho_unit * self.g_prime_norm(rho / self.rho_unit)
    }
}

/// Normalized view used by the root finder.
impl RootFunction for Characteristic {
    fn value(&self, r: f64) -> f64 {
        self.g_norm(r)
    }

    fn derivative(&self, r: f64) -> f64 {
        self.g_prime_norm(r)
    }

    fn scale(&self, r: f64) -> f64 {
        self.scale_norm(r)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfDomain(rho))
    }
}

pub fn characteristic_g(
    rho: f64,
    sigma: &[f64],
    part: &SpectralPartition,
    b: &[f64],
) -> Result<f64> {
    check_rho(rho)?;
    Ok(Characteristic::new(sigma, part, b).g(rho))
}

pub fn characteristic_g_prime(
    rho: f64,
    sigma: &[f64],
    part: &SpectralPartition,
    b: &[f64],
) -> Result<f64> {
    check_rho(rho)?;
    Ok(Characteristic::new(sigma, part, b).g_prime(rho))
}

/// Strict inequality `n sum s_i w_i > (sum_{j <= n1} s_j) (sum w_i)` under which
/// `G` tends to zero from above and has a unique root beyond ε.
pub fn root_condition(sigma: &[f64], part: &SpectralPartition, b: &[f64]) -> bool {
    let sigma_max = sigma.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let b_max = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if sigma_max == 0.0 || b_max == 0.0 {
        return false;
    }
    let s: Vec<f64> = sigma.iter().map(|v| (v / sigma_max).powi(2)).collect();
    let w: Vec<f64> = b.iter().map(|v| (v / b_max).powi(2)).collect();
    let lhs = sigma.len() as f64 * s.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let rhs = s[..part.n1].iter().sum::<f64>() * w.iter().sum::<f64>();
    lhs > rhs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonRoot {
    /// `max(formula, floor)`.
    pub value: f64,
    /// The formula value; `None` when it could not be formed.
    pub formula: Option<f64>,
    /// True when the formula's denominator was not positive.
    pub floored: bool,
}

/// Small-ρ root of `G` from the leading-order expansion around zero:
/// `eps = n2 sum s^-1 w / (beta n1 sum s^-2 w - beta sum s^-1 w sum_{j<=n1} s_j^-1)`.
///
/// Evaluated with `t_i = s_min / s_i` so nothing overflows.
pub fn epsilon_root(
    sigma: &[f64],
    part: &SpectralPartition,
    b: &[f64],
    floor: f64,
) -> Result<EpsilonRoot> {
    if part.n2 == 0 {
        return Err(Error::NotApplicable);
    }
    let sigma_min = sigma.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
    if sigma_min == 0.0 {
        // infinitely steep pole at the origin: the root collapses onto 0
        return Ok(EpsilonRoot {
            value: floor,
            formula: Some(0.0),
            floored: false,
        });
    }
    let t: Vec<f64> = sigma.iter().map(|v| (sigma_min / v).powi(2)).collect();
    let b_max = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let w: Vec<f64> = if b_max > 0.0 {
        b.iter().map(|v| (v / b_max).powi(2)).collect()
    } else {
        vec![0.0; b.len()]
    };
    let s1: f64 = t.iter().zip(&w).map(|(t, w)| t * w).sum();
    let s2: f64 = t.iter().zip(&w).map(|(t, w)| t * t * w).sum();
    let tt: f64 = t[..part.n1].iter().sum();
    let denom = part.beta * (Dd::prod(part.n1 as f64, s2) - Dd::prod(s1, tt)).to_f64();
    if !(denom > 0.0) || !denom.is_finite() {
        return Ok(EpsilonRoot {
            value: floor,
            formula: None,
            floored: true,
        });
    }
    let eps = part.n2 as f64 * sigma_min * sigma_min * s1 / denom;
    Ok(EpsilonRoot {
        value: eps.max(floor),
        formula: Some(eps),
        floored: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::partition_sigma;

    fn part(n1: usize, n: usize) -> SpectralPartition {
        SpectralPartition {
            n1,
            n2: n - n1,
            threshold: 0.0,
            c: 0.1,
            beta: n as f64 / n1 as f64,
        }
    }

    #[test]
    fn equal_spectrum_is_identically_zero() {
        let sigma = [3.0; 5];
        let p = partition_sigma(&sigma, 0.5).unwrap();
        let b = [1.0, -2.0, 0.5, 3.0, 0.1];
        for rho in [1e-8, 1e-3, 1.0, 7.0, 1e6] {
            assert_eq!(characteristic_g(rho, &sigma, &p, &b).unwrap(), 0.0);
            assert_eq!(characteristic_g_prime(rho, &sigma, &p, &b).unwrap(), 0.0);
        }
        assert!(!root_condition(&sigma, &p, &b));
    }

    #[test]
    fn rejects_nonpositive_rho() {
        let p = part(1, 2);
        for rho in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                characteristic_g(rho, &[2.0, 1.0], &p, &[1.0, 1.0]),
                Err(Error::OutOfDomain(_))
            ));
        }
    }

    #[test]
    fn root_condition_arithmetic() {
        assert!(root_condition(&[10.0, 0.01], &part(1, 2), &[1.0, 0.0]));
    }

    #[test]
    fn epsilon_not_applicable_without_trivial_modes() {
        assert_eq!(
            epsilon_root(&[2.0, 1.0], &part(2, 2), &[1.0, 1.0], 1e-12),
            Err(Error::NotApplicable)
        );
    }

    #[test]
    fn derivative_matches_central_difference() {
        let sigma = [2.0, 1.0, 0.3, 1e-3];
        let b = [0.4, -1.0, 2.0, 0.7];
        for n1 in 1..=4 {
            let p = part(n1, 4);
            for rho in [1e-5, 1e-2, 0.5, 3.0] {
                let h = 1e-6 * rho;
                let fd = (characteristic_g(rho + h, &sigma, &p, &b).unwrap()
                    - characteristic_g(rho - h, &sigma, &p, &b).unwrap())
                    / (2.0 * h);
                let d = characteristic_g_prime(rho, &sigma, &p, &b).unwrap();
                assert!(
                    (d - fd).abs() <= 1e-6f64.max(1e-5 * d.abs()),
                    "n1={n1} rho={rho}: {d} vs {fd}"
                );
            }
        }
    }
}
