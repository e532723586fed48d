//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use copra::spectral::SpectralPartition;

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `m x n` matrix with orthonormal columns from a QR of a Gaussian matrix.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(m, n, normal_vec(rng, m * n));
    g.qr().q()
}

/// Descending singular values whose logs are uniform over `decades`, with
/// both ends pinned so the spread is exactly `decades`.
pub fn log_spectrum(rng: &mut ChaCha8Rng, n: usize, top: f64, decades: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    t[0] = 0.0;
    if n > 1 {
        t[n - 1] = 1.0;
    }
    t.sort_by(f64::total_cmp);
    t.iter().map(|u| top * 10f64.powf(-decades * u)).collect()
}

/// `(G1, G2)` straight from the matrix traces, with `U^T y y^T U` formed
/// explicitly.
pub fn trace_form_parts(
    sigma: &[f64],
    part: &SpectralPartition,
    u: &DMatrix<f64>,
    y: &DVector<f64>,
    rho: f64,
) -> (f64, f64) {
    let n = sigma.len();
    let n1 = part.n1;
    let s2 = DMatrix::from_diagonal(&DVector::from_iterator(n, sigma.iter().map(|s| s * s)));
    let shifted_inv = (&s2 + DMatrix::identity(n, n) * rho).try_inverse().unwrap();
    let inv2 = &shifted_inv * &shifted_inv;
    let uty = u.transpose() * y;
    let m = &uty * uty.transpose();
    let s2_1 = s2.view((0, 0), (n1, n1)).into_owned();
    let inv2_1 = inv2.view((0, 0), (n1, n1)).into_owned();
    let weight = &s2_1 * part.beta + DMatrix::identity(n1, n1) * rho;
    let a = (&s2 * &inv2 * &m).trace();
    let t1 = (&inv2_1 * &weight).trace();
    let c = (&inv2 * &m).trace();
    let t2 = (&s2_1 * &inv2_1 * &weight).trace();
    (a * t1 + part.n2 as f64 / rho * a, c * t2)
}

fn rat(v: f64) -> BigRational {
    BigRational::from_f64(v).expect("finite")
}

/// Exact `(G1, G2)` of the five-term sum form over the rationals.
pub fn exact_parts(
    sigma: &[f64],
    part: &SpectralPartition,
    b: &[f64],
    rho: f64,
) -> (BigRational, BigRational) {
    let rho = rat(rho);
    let n = sigma.len();
    let beta = BigRational::new(BigInt::from(n), BigInt::from(part.n1));
    let s: Vec<BigRational> = sigma.iter().map(|&v| rat(v) * rat(v)).collect();
    let w: Vec<BigRational> = b.iter().map(|&v| rat(v) * rat(v)).collect();
    let (mut s1, mut s2, mut t1, mut t2) = (
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
    );
    for (si, wi) in s.iter().zip(&w) {
        let q = (si + &rho) * (si + &rho);
        s1 += si * wi / &q;
        s2 += wi / &q;
    }
    for sj in &s[..part.n1] {
        let q = (sj + &rho) * (sj + &rho);
        let num = &beta * sj + &rho;
        t1 += &num / &q;
        t2 += sj * &num / &q;
    }
    t1 += BigRational::from_integer(BigInt::from(part.n2)) / &rho;
    (s1 * t1, s2 * t2)
}

/// Exact `G` in the full-rank form `S1 sum 1/(s+rho) - S2 sum s/(s+rho)`.
pub fn exact_full_rank(sigma: &[f64], b: &[f64], rho: f64) -> BigRational {
    let rho = rat(rho);
    let (mut s1, mut s2, mut t1, mut t2) = (
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
    );
    for (&sv, &bv) in sigma.iter().zip(b) {
        let s = rat(sv) * rat(sv);
        let w = rat(bv) * rat(bv);
        let q = &s + &rho;
        s1 += &s * &w / (&q * &q);
        s2 += &w / (&q * &q);
        t1 += BigRational::one() / &q;
        t2 += &s / &q;
    }
    s1 * t1 - s2 * t2
}

pub fn to_f64(r: &BigRational) -> f64 {
    num_traits::ToPrimitive::to_f64(r).unwrap()
}

/// Plain double-precision sum form, no rescaling and no compensated products.
pub fn naive_g(sigma: &[f64], part: &SpectralPartition, b: &[f64], rho: f64) -> f64 {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (&sv, &bv) in sigma.iter().zip(b) {
        let s = sv * sv;
        let q = (s + rho) * (s + rho);
        s1 += s * bv * bv / q;
        s2 += bv * bv / q;
    }
    let mut t1 = part.n2 as f64 / rho;
    let mut t2 = 0.0;
    for &sv in &sigma[..part.n1] {
        let s = sv * sv;
        let q = (s + rho) * (s + rho);
        t1 += (part.beta * s + rho) / q;
        t2 += s * (part.beta * s + rho) / q;
    }
    s1 * t1 - s2 * t2
}

/// Log-spaced grid of `points` values on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi / lo).ln() / (points - 1) as f64;
    (0..points).map(|k| lo * (step * k as f64).exp()).collect()
}

/// Last `- -> +` sign change of `f` on a log grid, refined by bisection in
/// log space until the bracket stops shrinking.
pub fn last_rising_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> Option<f64> {
    let grid = log_grid(lo, hi, points);
    let vals: Vec<f64> = grid.iter().map(|&r| f(r)).collect();
    let k = (1..grid.len())
        .rev()
        .find(|&k| vals[k - 1] < 0.0 && vals[k] > 0.0)?;
    let (mut a, mut b) = (grid[k - 1], grid[k]);
    loop {
        let mid = (a * b).sqrt();
        if mid <= a || mid >= b {
            break;
        }
        if f(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// Number of sign changes of `f` over `grid`, ignoring exact zeros.
pub fn sign_changes(f: impl Fn(f64) -> f64, grid: &[f64]) -> usize {
    let mut prev = 0.0f64;
    let mut count = 0;
    for &r in grid {
        let v = f(r);
        if v != 0.0 {
            if prev != 0.0 && (v > 0.0) != (prev > 0.0) {
                count += 1;
            }
            prev = v;
        }
    }
    count
}

pub fn nmse_db(x_hat: &DVector<f64>, x0: &DVector<f64>) -> f64 {
    10.0 * ((x_hat - x0).norm_squared() / x0.norm_squared()).log10()
}
