//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use atlasreg::phantom::{generate, smooth_random_field, Phantom, PhantomSpec};
use atlasreg::transform::{DisplacementField, VelocityField};
use atlasreg::volume::{is_interior, voxels, Dims};
use atlasreg::OptimizerConfig;

/// Smooth random velocity: smoothed white noise rescaled to `max_norm`.
pub fn random_velocity(dims: Dims, seed: u64, sigma: f64, max_norm: f64) -> VelocityField {
    smooth_random_field(dims, seed, sigma, max_norm).unwrap().cast()
}

/// Unit-time flow by explicit Euler, tracking each grid point independently.
pub fn euler_flow(v: &VelocityField, steps: usize) -> DisplacementField {
    let h = 1.0 / steps as f64;
    DisplacementField::from_fn(v.dims(), |g| {
        let start = [g[0] as f64, g[1] as f64, g[2] as f64];
        let mut p = start;
        for _ in 0..steps {
            let d = v.sample(p);
            for a in 0..3 {
                p[a] += h * d[a];
            }
        }
        [p[0] - start[0], p[1] - start[1], p[2] - start[2]]
    })
    .unwrap()
}

/// Largest pointwise distance between two fields over voxels `margin` away from the faces.
pub fn max_interior_diff(a: &DisplacementField, b: &DisplacementField, margin: usize) -> f64 {
    let dims = a.dims();
    voxels(dims)
        .enumerate()
        .filter(|(_, g)| is_interior(dims, *g, margin))
        .map(|(i, _)| {
            let (x, y) = (a.at(i), b.at(i));
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Fraction of interior voxels whose displacement is shorter than `tol`.
pub fn interior_fraction_below(u: &DisplacementField, margin: usize, tol: f64) -> f64 {
    let dims = u.dims();
    let (mut total, mut ok) = (0usize, 0usize);
    for (i, g) in voxels(dims).enumerate() {
        if is_interior(dims, g, margin) {
            total += 1;
            let d = u.at(i);
            ok += usize::from((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() < tol);
        }
    }
    ok as f64 / total as f64
}

pub fn preset(name: &str, n: usize) -> Phantom {
    generate(&PhantomSpec::preset(name, [n; 3]).unwrap()).unwrap()
}

/// Short schedule for tests that only need a working run.
pub fn quick_config() -> OptimizerConfig {
    OptimizerConfig {
        affine_iterations: 40,
        dense_iterations: 40,
        ..Default::default()
    }
}
