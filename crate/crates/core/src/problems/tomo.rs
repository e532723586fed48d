//! Ray-pixel intersection operator on the unit square.
//!
//! Pixel `(r, c)` of an `N x N` grid covers `x in [c/N, (c+1)/N]`,
//! `y in [r/N, (r+1)/N]` and maps to column `c * N + r` (column-stacked image).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::IllPosedProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    /// Unit direction.
    pub dir: [f64; 2],
}

impl Ray {
    pub fn new(origin: [f64; 2], dir: [f64; 2]) -> Self {
        let norm = dir[0].hypot(dir[1]);
        Ray {
            origin,
            dir: [dir[0] / norm, dir[1] / norm],
        }
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
        ]
    }

    /// Parameter interval of the line inside `[0,1]^2`, or `None` if it misses.
    pub fn clip_unit_square(&self) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for k in 0..2 {
            let (o, d) = (self.origin[k], self.dir[k]);
            if d == 0.0 {
                if !(0.0..=1.0).contains(&o) {
                    return None;
                }
            } else {
                let (a, b) = ((0.0 - o) / d, (1.0 - o) / d);
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        (hi > lo).then_some((lo, hi))
    }

    pub fn chord_length(&self) -> f64 {
        self.clip_unit_square().map_or(0.0, |(lo, hi)| hi - lo)
    }
}

/// Random rays: uniform entry point on the boundary, direction uniform in
/// angle over the inward half-plane.
pub fn tomo_rays(n_rays: usize, seed: u64) -> Vec<Ray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_rays)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * 4.0;
            let side = (u as usize).min(3);
            let f = u - side as f64;
            let (origin, normal) = match side {
                0 => ([f, 0.0], [0.0, 1.0]),
                1 => ([1.0, f], [-1.0, 0.0]),
                2 => ([1.0 - f, 1.0], [0.0, -1.0]),
                _ => ([0.0, 1.0 - f], [1.0, 0.0]),
            };
            let theta: f64 = (rng.random::<f64>() - 0.5) * PI;
            let (s, c) = theta.sin_cos();
            let dir = [c * normal[0] - s * normal[1], s * normal[0] + c * normal[1]];
            Ray::new(origin, dir)
        })
        .collect()
}

/// Sparse row of the operator: `(column, length)` pairs with positive length.
pub fn ray_pixel_lengths(ray: &Ray, n_side: usize) -> Vec<(usize, f64)> {
    let Some((t0, t1)) = ray.clip_unit_square() else {
        return Vec::new();
    };
    let nf = n_side as f64;
    let mut ts = vec![t0, t1];
    for k in 0..2 {
        let d = ray.dir[k];
        if d == 0.0 {
            continue;
        }
        for g in 1..n_side {
            let t = (g as f64 / nf - ray.origin[k]) / d;
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let [px, py] = ray.point(0.5 * (w[0] + w[1]));
        let c = ((px * nf) as usize).min(n_side - 1);
        let r = ((py * nf) as usize).min(n_side - 1);
        let j = c * n_side + r;
        match out.last_mut() {
            Some((last, acc)) if *last == j => *acc += len,
            _ => out.push((j, len)),
        }
    }
    out
}

/// Rectangles and a disk on a zero background, sampled at pixel centres.
pub fn phantom(n_side: usize) -> DMatrix<f64> {
    let nf = n_side as f64;
    DMatrix::from_fn(n_side, n_side, |r, c| {
        let x = (c as f64 + 0.5) / nf;
        let y = (r as f64 + 0.5) / nf;
        let mut v = 0.0;
        if (0.1..=0.9).contains(&x) && (0.1..=0.9).contains(&y) {
            v = 0.3;
        }
        if (0.2..=0.45).contains(&x) && (0.55..=0.85).contains(&y) {
            v = 0.8;
        }
        if (x - 0.62).powi(2) + (y - 0.38).powi(2) <= 0.18 * 0.18 {
            v = 1.0;
        }
        v
    })
}

pub fn tomo(n_side: usize, n_rays: usize, seed: u64) -> Result<IllPosedProblem> {
    if n_side < 2 {
        return Err(Error::InvalidDimension(format!(
            "tomo needs n_side >= 2, got {n_side}"
        )));
    }
    let n = n_side * n_side;
    if n_rays < n {
        return Err(Error::InvalidDimension(format!(
            "tomo needs n_rays >= n_side^2 = {n}, got {n_rays}"
        )));
    }
    let rays = tomo_rays(n_rays, seed);
    let mut a = DMatrix::zeros(n_rays, n);
    for (i, ray) in rays.iter().enumerate() {
        for (j, len) in ray_pixel_lengths(ray, n_side) {
            a[(i, j)] += len;
        }
    }
    // column-major storage of an n_side x n_side matrix is column stacking
    let img = phantom(n_side);
    let x0 = DVector::from_column_slice(img.as_slice());
    let mut p = IllPosedProblem::new("tomo", a, x0)
        .with_meta("n_side", n_side)
        .with_meta("n_rays", n_rays)
        .with_meta("n_rays_default", n_rays == n);
    p.seed = Some(seed);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parallel_ray_on_single_pixel() {
        let ray = Ray::new([0.3, 0.0], [0.0, 1.0]);
        let row = ray_pixel_lengths(&ray, 1);
        assert_eq!(row.len(), 1);
        assert!((row[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn horizontal_ray_hits_one_pixel_row() {
        let ray = Ray::new([0.0, 0.6], [1.0, 0.0]);
        let row = ray_pixel_lengths(&ray, 4);
        let cols: Vec<usize> = row.iter().map(|e| e.0).collect();
        // r = 2 in every column c: j = 4c + 2
        assert_eq!(cols, vec![2, 6, 10, 14]);
        assert!(row.iter().all(|e| (e.1 - 0.25).abs() < 1e-15));
    }

    #[test]
    fn diagonal_ray_length() {
        let ray = Ray::new([0.0, 0.0], [1.0, 1.0]);
        let total: f64 = ray_pixel_lengths(&ray, 5).iter().map(|e| e.1).sum();
        assert!((total - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rays_enter_the_square() {
        for ray in tomo_rays(500, 3) {
            assert!(ray.chord_length() > 0.0);
        }
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(tomo(1, 4, 0), Err(Error::InvalidDimension(_))));
        assert!(matches!(tomo(4, 15, 0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn phantom_has_distinct_levels() {
        let img = phantom(32);
        for level in [0.0, 0.3, 0.8, 1.0] {
            assert!(img.iter().any(|&v| v == level));
        }
    }
}
