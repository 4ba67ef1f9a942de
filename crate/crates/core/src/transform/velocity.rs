use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::transform::field::VelocityField;
use crate::volume::{ensure_same_dims, Dims};

/// Diagonal Gaussian over velocity fields: per-voxel mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityDistribution {
    pub mu: VelocityField,
    pub log_var: VelocityField,
}

/// Standard-normal draws used for one reparameterized sample, kept for the backward pass.
pub type Noise = [Vec<f64>; 3];

impl VelocityDistribution {
    pub fn new(mu: VelocityField, log_var: VelocityField) -> Result<Self> {
        ensure_same_dims(mu.dims(), log_var.dims())?;
        Ok(Self { mu, log_var })
    }

    /// Zero mean with a uniform log-variance.
    pub fn constant(dims: Dims, log_var: f64) -> Result<Self> {
        let mu = VelocityField::zeros(dims)?;
        let lv = VelocityField::from_fn(dims, |_| [log_var; 3])?;
        Ok(Self { mu, log_var: lv })
    }

    pub fn dims(&self) -> Dims {
        self.mu.dims()
    }

    /// `z = mu + eps * exp(log_var / 2)`, eps drawn from a ChaCha8 stream seeded with `seed`.
    pub fn sample(&self, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng).0
    }

    /// Draws component x for every voxel, then y, then z.
    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> (VelocityField, Noise) {
        let n = self.mu.len();
        let noise: Noise = std::array::from_fn(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        let z = self.reparameterize(&noise);
        (z, noise)
    }

    pub fn reparameterize(&self, noise: &Noise) -> VelocityField {
        let comps = std::array::from_fn(|a| {
            let mu = self.mu.component(a);
            let lv = self.log_var.component(a);
            (0..mu.len()).map(|i| mu[i] + noise[a][i] * (0.5 * lv[i]).exp()).collect()
        });
        VelocityField::from_parts(self.dims(), comps)
    }
}
