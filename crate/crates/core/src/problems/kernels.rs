//! Discretized first-kind Fredholm integral equations.
//!
//! | problem    | kernel `K(s, t)`                              | domain              | discretization          |
//! |------------|-----------------------------------------------|---------------------|-------------------------|
//! | `shaw`     | `(cos s + cos t)^2 (sin u / u)^2`, `u = pi (sin s + sin t)` | `[-pi/2, pi/2]^2` | midpoint quadrature |
//! | `baart`    | `exp(s cos t)`                                | `[0, pi/2] x [0, pi]` | Galerkin in s, Simpson in t |
//! | `foxgood`  | `sqrt(s^2 + t^2)`                             | `[0, 1]^2`          | midpoint quadrature     |
//! | `heat`     | `k(s - t)`, `k(t) = t^-3/2 exp(-1/(4 kappa^2 t)) / (2 kappa sqrt(pi))` | `[0, 1]^2` | midpoint, lower-triangular Toeplitz |
//! | `deriv2`   | Green's function of `-u''` with `u(0) = u(1) = 0` | `[0, 1]^2`      | Galerkin, box functions |
//! | `wing`     | `t exp(-s t^2)`                               | `[0, 1]^2`          | midpoint quadrature     |
//! | `spikes`   | heat kernel with `kappa = 0.65` on `[0, t_max]` | `[0, 5]^2`        | right endpoints, lower-triangular Toeplitz |
//! | `ilaplace` | `exp(-s t)`                                   | `[0, inf)^2`        | Gauss-Laguerre in t, `s_i = 10 i / n` |
//!
//! True solutions: shaw is a sum of two Gaussians, baart `sin t`, foxgood `t`,
//! heat a smooth bump on the left half, deriv2 `t`, wing the indicator of
//! `(1/3, 2/3)`, spikes a unit step plus a decaying pulse train, ilaplace `exp(-t/2)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::IllPosedProblem;

pub const HEAT_KAPPA: f64 = 1.0;
pub const SPIKES_T_MAX: f64 = 5.0;
pub const SPIKES_KAPPA: f64 = 0.65;

pub fn shaw(n: usize) -> IllPosedProblem {
    let h = PI / n as f64;
    let s: Vec<f64> = (0..n).map(|i| -PI / 2.0 + (i as f64 + 0.5) * h).collect();
    let co: Vec<f64> = s.iter().map(|v| v.cos()).collect();
    let psi: Vec<f64> = s.iter().map(|v| PI * v.sin()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let u = psi[i] + psi[j];
        let sinc = if u == 0.0 { 1.0 } else { u.sin() / u };
        let v = (co[i] + co[j]) * sinc;
        h * v * v
    });
    let x0 = DVector::from_iterator(
        n,
        s.iter()
            .map(|&t| 2.0 * (-6.0 * (t - 0.8).powi(2)).exp() + (-2.0 * (t + 0.5).powi(2)).exp()),
    );
    IllPosedProblem::new("shaw", a, x0)
}

pub fn baart(n: usize) -> IllPosedProblem {
    let hs = PI / (2.0 * n as f64);
    let ht = PI / n as f64;
    let c = 1.0 / (3.0 * 2f64.sqrt());
    let ihs: Vec<f64> = (0..=n).map(|i| i as f64 * hs).collect();
    let nh = n / 2;
    // exact integral of exp(s co) over each s-box
    let box_integral = |co: f64| -> Vec<f64> {
        (0..n)
            .map(|i| ((ihs[i + 1] * co).exp() - (ihs[i] * co).exp()) / co)
            .collect()
    };
    let mut a = DMatrix::zeros(n, n);
    let mut f3 = box_integral(1.0);
    for j in 0..n {
        let f1 = f3.clone();
        let co2 = ((j as f64 + 0.5) * ht).cos();
        let co3 = ((j + 1) as f64 * ht).cos();
        let f2 = box_integral(co2);
        f3 = if j + 1 == nh {
            vec![hs; n]
        } else {
            box_integral(co3)
        };
        for i in 0..n {
            a[(i, j)] = c * (f1[i] + 4.0 * f2[i] + f3[i]);
        }
    }
    let x0 = DVector::from_fn(n, |i, _| ((i as f64 + 0.5) * ht).sin());
    IllPosedProblem::new("baart", a, x0)
}

pub fn foxgood(n: usize) -> IllPosedProblem {
    let h = 1.0 / n as f64;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
    let a = DMatrix::from_fn(n, n, |i, j| h * (t[i] * t[i] + t[j] * t[j]).sqrt());
    let x0 = DVector::from_vec(t);
    IllPosedProblem::new("foxgood", a, x0)
}

fn heat_toeplitz(n: usize, len: f64, kappa: f64) -> DMatrix<f64> {
    let h = len / n as f64;
    let c = h / (2.0 * kappa * PI.sqrt());
    let d = 1.0 / (4.0 * kappa * kappa);
    let k: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            c * t.powf(-1.5) * (-d / t).exp()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| if i >= j { k[i - j] } else { 0.0 })
}

pub fn heat(n: usize, kappa: f64) -> IllPosedProblem {
    let a = heat_toeplitz(n, 1.0, kappa);
    let mut x0 = DVector::zeros(n);
    for i in 1..=n / 2 {
        let ti = i as f64 * 20.0 / n as f64;
        x0[i - 1] = if ti < 2.0 {
            0.75 * ti * ti / 4.0
        } else if ti < 3.0 {
            0.75 + (ti - 2.0) * (3.0 - ti)
        } else {
            0.75 * (-(ti - 3.0) * 2.0).exp()
        };
    }
    IllPosedProblem::new("heat", a, x0).with_meta("kappa", kappa)
}

pub fn deriv2(n: usize) -> IllPosedProblem {
    let h = 1.0 / n as f64;
    let h2 = h * h;
    let mut a = DMatrix::zeros(n, n);
    for i in 1..=n {
        let fi = i as f64;
        a[(i - 1, i - 1)] = h2 * ((fi * fi - fi + 0.25) * h - (fi - 2.0 / 3.0));
        for j in 1..i {
            let v = h2 * (j as f64 - 0.5) * ((fi - 0.5) * h - 1.0);
            a[(i - 1, j - 1)] = v;
            a[(j - 1, i - 1)] = v;
        }
    }
    let h32 = h * h.sqrt();
    let x0 = DVector::from_fn(n, |i, _| h32 * (i as f64 + 0.5));
    IllPosedProblem::new("deriv2", a, x0)
}

pub fn wing(n: usize, t1: f64, t2: f64) -> IllPosedProblem {
    let h = 1.0 / n as f64;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
    let a = DMatrix::from_fn(n, n, |i, j| h * t[j] * (-t[i] * t[j] * t[j]).exp());
    let x0 = DVector::from_fn(n, |i, _| if t1 < t[i] && t[i] < t2 { 1.0 } else { 0.0 });
    IllPosedProblem::new("wing", a, x0)
        .with_meta("t1", t1)
        .with_meta("t2", t2)
}

pub fn spikes(n: usize, t_max: f64) -> IllPosedProblem {
    // heat-conduction kernel sampled at right endpoints t_j = j * del
    let del = t_max / n as f64;
    let c = del / (2.0 * SPIKES_KAPPA * PI.sqrt());
    let d = 1.0 / (4.0 * SPIKES_KAPPA * SPIKES_KAPPA);
    let k: Vec<f64> = (1..=n)
        .map(|j| {
            let t = j as f64 * del;
            c * t.powf(-1.5) * (-d / t).exp()
        })
        .collect();
    let a = DMatrix::from_fn(n, n, |i, j| if i >= j { k[i - j] } else { 0.0 });
    // unit step at t = 0.5 plus a pulse train at t = 0.5, 1.5, ... with
    // linearly decaying heights
    let mut x0 = DVector::from_fn(n, |j, _| {
        if (j + 1) as f64 * del >= 0.5 {
            1.0
        } else {
            0.0
        }
    });
    let count = t_max.floor() as usize;
    for p in 0..count {
        let t = p as f64 + 0.5;
        let idx = ((t / del).round() as usize).clamp(1, n) - 1;
        x0[idx] += 1.0 - p as f64 / count as f64;
    }
    IllPosedProblem::new("spikes", a, x0)
        .with_meta("t_max", t_max)
        .with_meta("kappa", SPIKES_KAPPA)
}

/// Gauss-Laguerre nodes and log-weights for `int_0^inf exp(-t) f(t) dt`.
///
/// Nodes come from the Jacobi matrix and are polished by Newton on `L_n`;
/// weights use `w = t / ((n+1)^2 L_{n+1}(t)^2)`, kept in log form because the
/// tail weights underflow long before `exp(t) w` does.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 * i as f64 + 1.0
        } else if i + 1 == j || j + 1 == i {
            -(i.max(j) as f64)
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(|a, b| a.total_cmp(b));
    // (L_n(t), L_{n-1}(t)) via the three-term recurrence
    let laguerre = |k: usize, t: f64| -> (f64, f64) {
        let (mut prev, mut cur) = (1.0, 1.0 - t);
        if k == 0 {
            return (1.0, 0.0);
        }
        for j in 1..k {
            let jf = j as f64;
            let next = ((2.0 * jf + 1.0 - t) * cur - jf * prev) / (jf + 1.0);
            prev = cur;
            cur = next;
        }
        (cur, prev)
    };
    for t in nodes.iter_mut() {
        for _ in 0..3 {
            let (ln, lm) = laguerre(n, *t);
            // t L_n' = n (L_n - L_{n-1})
            let deriv = n as f64 * (ln - lm) / *t;
            if deriv != 0.0 && deriv.is_finite() {
                *t -= ln / deriv;
            }
        }
    }
    let np1 = (n + 1) as f64;
    let log_w = nodes
        .iter()
        .map(|&t| {
            let (l, _) = laguerre(n + 1, t);
            t.ln() - 2.0 * np1.ln() - 2.0 * l.abs().ln()
        })
        .collect();
    (nodes, log_w)
}

pub fn ilaplace(n: usize) -> IllPosedProblem {
    let (t, log_w) = gauss_laguerre(n);
    let s: Vec<f64> = (1..=n).map(|i| 10.0 * i as f64 / n as f64).collect();
    let a = DMatrix::from_fn(n, n, |i, j| (log_w[j] + (1.0 - s[i]) * t[j]).exp());
    let x0 = DVector::from_iterator(n, t.iter().map(|&tj| (-tj / 2.0).exp()));
    IllPosedProblem::new("ilaplace", a, x0)
}
