//! Safeguarded scalar Newton iteration.

use crate::error::{Error, Result};

pub trait RootFunction {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    /// Magnitude that `|value|` is compared against when testing convergence.
    fn scale(&self, _x: f64) -> f64 {
        1.0
    }
}

/// Adapter for a pair of closures.
pub struct FnRoot<F, D>(pub F, pub D);

impl<F: Fn(f64) -> f64, D: Fn(f64) -> f64> RootFunction for FnRoot<F, D> {
    fn value(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (self.1)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub x_init: f64,
    /// Stop once `|f(x)| <= xi * scale(x)`.
    pub xi: f64,
    pub max_iter: usize,
    /// Open lower and closed upper limit on iterates.
    pub lower: f64,
    pub upper: f64,
    /// Sign-change bracket; steps leaving it are replaced by bisection.
    pub bracket: Option<(f64, f64)>,
}

impl NewtonOptions {
    pub fn new(x_init: f64) -> Self {
        NewtonOptions {
            x_init,
            xi: 1e-12,
            max_iter: 100,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            bracket: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOutcome {
    pub x: f64,
    pub iters: usize,
    pub residual: f64,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 && hi > 0.0 {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    }
}

pub fn newton_solve<R: RootFunction + ?Sized>(
    f: &R,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let mut x = opts.x_init;
    // orientation of the bracket: sign of f at its left end
    let mut bracket = opts.bracket.map(|(lo, hi)| (lo, hi, f.value(lo) < 0.0));
    if let Some((lo, hi, _)) = bracket {
        if !(x > lo && x < hi) {
            x = midpoint(lo, hi);
        }
    }
    for iter in 0..opts.max_iter {
        let g = f.value(x);
        if !g.is_finite() {
            return Err(Error::NoConvergence { iters: iter });
        }
        if g.abs() <= opts.xi * f.scale(x) {
            return Ok(polish(f, x, g, iter, bracket.map(|b| (b.0, b.1)), opts));
        }
        if let Some((lo, hi, neg_left)) = bracket.as_mut() {
            if (g < 0.0) == *neg_left {
                *lo = x;
            } else {
                *hi = x;
            }
            if *hi - *lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()) {
                return Ok(NewtonOutcome {
                    x,
                    iters: iter,
                    residual: g.abs(),
                });
            }
        }
        let d = f.derivative(x);
        let step = if d != 0.0 && d.is_finite() {
            g / d
        } else {
            f64::NAN
        };
        let mut next = x - step;
        let outside = !next.is_finite()
            || next <= opts.lower
            || next > opts.upper
            || bracket.is_some_and(|(lo, hi, _)| next <= lo || next >= hi);
        if outside {
            match bracket {
                Some((lo, hi, _)) => next = midpoint(lo, hi),
                None if !step.is_finite() => return Err(Error::DerivativeVanished(x)),
                None if next <= opts.lower => next = 0.5 * (x + opts.lower.max(x - x.abs())),
                None => next = opts.upper.min(next),
            }
        }
        if (next - x).abs() <= 1e-15 * x.abs() {
            return Ok(NewtonOutcome {
                x: next,
                iters: iter + 1,
                residual: f.value(next).abs(),
            });
        }
        x = next;
    }
    Err(Error::NoConvergence {
        iters: opts.max_iter,
    })
}

/// One extra Newton step once the tolerance is met; kept only if it stays in
/// bounds and does not increase `|f|`.
fn polish<R: RootFunction + ?Sized>(
    f: &R,
    x: f64,
    g: f64,
    iters: usize,
    bracket: Option<(f64, f64)>,
    opts: &NewtonOptions,
) -> NewtonOutcome {
    let done = NewtonOutcome {
        x,
        iters,
        residual: g.abs(),
    };
    if g == 0.0 {
        return done;
    }
    let d = f.derivative(x);
    let next = x - g / d;
    let inside = next.is_finite()
        && next > opts.lower
        && next <= opts.upper
        && bracket.is_none_or(|(lo, hi)| next >= lo && next <= hi);
    if !inside {
        return done;
    }
    let g2 = f.value(next);
    if g2.abs() <= g.abs() {
        NewtonOutcome {
            x: next,
            iters,
            residual: g2.abs(),
        }
    } else {
        done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_one_step() {
        let f = FnRoot(|x| x - 5.0, |_| 1.0);
        let out = newton_solve(&f, &NewtonOptions::new(1.0)).unwrap();
        assert_eq!(out.x, 5.0);
        assert_eq!(out.iters, 1);
    }

    #[test]
    fn quadratic_converges() {
        let f = FnRoot(|x: f64| x * x - 2.0, |x| 2.0 * x);
        let out = newton_solve(&f, &NewtonOptions::new(1.0)).unwrap();
        assert!((out.x - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn flat_derivative_without_bracket() {
        let f = FnRoot(|_| 1.0, |_| 0.0);
        assert!(matches!(
            newton_solve(&f, &NewtonOptions::new(1.0)),
            Err(Error::DerivativeVanished(_))
        ));
    }

    #[test]
    fn bracket_rescues_bad_derivative() {
        // atan has tiny derivative far out; plain Newton diverges from x = 3
        let f = FnRoot(|x: f64| x.atan(), |x: f64| 1.0 / (1.0 + x * x));
        let mut opts = NewtonOptions::new(3.0);
        assert!(newton_solve(&f, &opts).is_err());
        opts.bracket = Some((-1.0, 4.0));
        let out = newton_solve(&f, &opts).unwrap();
        assert!(out.x.abs() < 1e-12);
    }

    #[test]
    fn iteration_cap() {
        let f = FnRoot(|x: f64| x.atan(), |x: f64| 1.0 / (1.0 + x * x));
        let mut opts = NewtonOptions::new(0.5);
        opts.max_iter = 1;
        opts.xi = 0.0;
        assert_eq!(
            newton_solve(&f, &opts),
            Err(Error::NoConvergence { iters: 1 })
        );
    }
}
