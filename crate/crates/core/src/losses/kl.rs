//! KL divergence of a diagonal velocity posterior against the lattice-Laplacian prior.
//!
//! With `D` the graph Laplacian of the 6-neighbourhood lattice and
//! `Σ_q = diag(exp(log_var))`, the divergence reduces to local terms:
//!
//! ```text
//! ½ [ λ Σ_g deg(g) σ²(g) − Σ_g log σ²(g) + λ Σ_(g,g') ‖μ(g) − μ(g')‖² ]
//! ```
//!
//! where the last sum runs once over every lattice edge. The constant of the
//! full Gaussian KL is not included, so the value may be negative.

use crate::transform::{VelocityDistribution, VelocityField};
use crate::volume::{linear_index, voxels, Dims};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlConfig {
    /// Prior precision weight.
    pub lambda: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self { lambda: 20.0 }
    }
}

/// Number of in-grid 6-neighbours of `g`.
pub fn lattice_degree(dims: Dims, g: [usize; 3]) -> usize {
    (0..3)
        .map(|a| usize::from(g[a] > 0) + usize::from(g[a] + 1 < dims[a]))
        .sum()
}

/// One scalar channel of the KL.
pub fn kl_channel(dims: Dims, mu: &[f64], log_var: &[f64], lambda: f64) -> f64 {
    let mut trace = 0.0;
    let mut log_det = 0.0;
    let mut quad = 0.0;
    for (i, g) in voxels(dims).enumerate() {
        trace += lattice_degree(dims, g) as f64 * log_var[i].exp();
        log_det += log_var[i];
        for a in 0..3 {
            if g[a] + 1 < dims[a] {
                let mut h = g;
                h[a] += 1;
                let d = mu[i] - mu[linear_index(dims, h[0], h[1], h[2])];
                quad += d * d;
            }
        }
    }
    0.5 * (lambda * trace - log_det + lambda * quad)
}

/// Gradients of [`kl_channel`] with respect to `mu` and `log_var`, accumulated into the outputs.
pub fn kl_channel_gradient(dims: Dims, mu: &[f64], log_var: &[f64], lambda: f64, d_mu: &mut [f64], d_log_var: &mut [f64]) {
    for (i, g) in voxels(dims).enumerate() {
        let deg = lattice_degree(dims, g) as f64;
        d_log_var[i] += 0.5 * (lambda * deg * log_var[i].exp() - 1.0);
        for a in 0..3 {
            if g[a] + 1 < dims[a] {
                let mut h = g;
                h[a] += 1;
                let j = linear_index(dims, h[0], h[1], h[2]);
                let d = lambda * (mu[i] - mu[j]);
                d_mu[i] += d;
                d_mu[j] -= d;
            }
        }
    }
}

pub fn kl_velocity_loss(dist: &VelocityDistribution, cfg: &KlConfig) -> f64 {
    let dims = dist.dims();
    (0..3)
        .map(|a| kl_channel(dims, dist.mu.component(a), dist.log_var.component(a), cfg.lambda))
        .sum()
}

/// `(dKL/dmu, dKL/dlog_var)`.
pub fn kl_velocity_gradient(dist: &VelocityDistribution, cfg: &KlConfig) -> (VelocityField, VelocityField) {
    let dims = dist.dims();
    let n = dist.mu.len();
    let mut d_mu: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    let mut d_lv: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    for a in 0..3 {
        kl_channel_gradient(
            dims,
            dist.mu.component(a),
            dist.log_var.component(a),
            cfg.lambda,
            &mut d_mu[a],
            &mut d_lv[a],
        );
    }
    (
        VelocityField::from_components(dims, d_mu).unwrap(),
        VelocityField::from_components(dims, d_lv).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_voxel_hand_example() {
        // nodes: deg 1 each, sigma^2 = 1 -> trace 2, log det 0; one edge with |0-1|^2 = 1
        let v = kl_channel([2, 1, 1], &[0.0, 1.0], &[0.0, 0.0], 1.0);
        assert_relative_eq!(v, 1.5, epsilon = 1e-12);

        let mu = VelocityField::from_components([2, 1, 1], [vec![0.0, 1.0], vec![0.0; 2], vec![0.0; 2]]).unwrap();
        let lv = VelocityField::zeros([2, 1, 1]).unwrap();
        let d = VelocityDistribution::new(mu, lv).unwrap();
        // x channel 1.5, y and z channels 0.5 * (2 - 0 + 0) each
        assert_relative_eq!(kl_velocity_loss(&d, &KlConfig { lambda: 1.0 }), 3.5, epsilon = 1e-12);
    }

    #[test]
    fn trace_term_stationary_at_inverse_degree() {
        let dims = [4, 4, 4];
        let lambda = 3.0;
        let n = 64;
        let mu = vec![0.0; n];
        let lv: Vec<f64> = voxels(dims).map(|g| -(lambda * lattice_degree(dims, g) as f64).ln()).collect();
        let mut dm = vec![0.0; n];
        let mut dl = vec![0.0; n];
        kl_channel_gradient(dims, &mu, &lv, lambda, &mut dm, &mut dl);
        assert!(dl.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_mean_has_no_edge_term() {
        let dims = [3, 4, 2];
        let lv = vec![0.0; 24];
        let zero = kl_channel(dims, &[0.0; 24], &lv, 2.0);
        let constant = kl_channel(dims, &[4.2; 24], &lv, 2.0);
        assert_relative_eq!(zero, constant, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dims = [3, 2, 2];
        let n = 12;
        let mu: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let lv: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos() - 0.5).collect();
        let lambda = 1.7;
        let mut dm = vec![0.0; n];
        let mut dl = vec![0.0; n];
        kl_channel_gradient(dims, &mu, &lv, lambda, &mut dm, &mut dl);
        let h = 1e-6;
        for i in 0..n {
            let mut p = mu.clone();
            let mut m = mu.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (kl_channel(dims, &p, &lv, lambda) - kl_channel(dims, &m, &lv, lambda)) / (2.0 * h);
            assert_relative_eq!(dm[i], fd, epsilon = 1e-6);
            let mut p = lv.clone();
            let mut m = lv.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (kl_channel(dims, &mu, &p, lambda) - kl_channel(dims, &mu, &m, lambda)) / (2.0 * h);
            assert_relative_eq!(dl[i], fd, epsilon = 1e-6);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nonnegative_when_variance_at_most_one(
                mu in prop::collection::vec(-3.0f64..3.0, 12),
                lv in prop::collection::vec(-6.0f64..0.0, 12),
                lambda in 0.2f64..5.0,
            ) {
                prop_assert!(kl_channel([2, 3, 2], &mu, &lv, lambda) >= 0.0);
            }
        }
    }
}
