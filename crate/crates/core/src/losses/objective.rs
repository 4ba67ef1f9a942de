//! The weighted registration objective and its per-term breakdown.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::kl::{kl_velocity_loss, KlConfig};
use crate::losses::mi::{MiConfig, ParzenMi};
use crate::losses::regularizers::{mmd_loss, smoothness_loss};
use crate::losses::similarity::segmentation_sim_loss;
use crate::optimizer::{BlockParams, CascadeState};
use crate::pipeline::warp_labels_soft;
use crate::transform::{warp, VelocityField};
use crate::volume::{ensure_same_dims, LabelVolume, Volume3};

/// Non-negative weights of the objective terms.
///
/// The KL and smoothness sums scale with the grid, so they enter the objective
/// divided by the voxel count; their weights are per voxel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default)]
pub struct LossWeights {
    pub recon_diff: f64,
    pub recon_affine: f64,
    pub segmentation: f64,
    pub kl: f64,
    pub smooth: f64,
    pub mmd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon_diff: 1.0,
            recon_affine: 1.0,
            segmentation: 4.0,
            kl: 0.005,
            smooth: 0.1,
            mmd: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.recon_diff, self.recon_affine, self.segmentation, self.kl, self.smooth, self.mmd];
        if all.iter().any(|w| !(*w >= 0.0)) || all.iter().all(|w| *w == 0.0) {
            return Err(crate::Error::Config(
                "loss weights must be non-negative with at least one positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub mi: MiConfig,
    pub kl: KlConfig,
    /// `None` uses the median heuristic.
    pub mmd_bandwidth: Option<f64>,
    pub mmd_samples: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            mi: MiConfig::default(),
            kl: KlConfig::default(),
            mmd_bandwidth: Some(1.0),
            mmd_samples: 256,
        }
    }
}

/// Unweighted term values plus the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    pub recon_diff: f64,
    pub recon_affine: f64,
    pub segmentation: f64,
    pub kl: Vec<f64>,
    pub smooth: Vec<f64>,
    pub mmd: Vec<f64>,
    /// `(label, weighted value)`; sums to `total`.
    pub terms: Vec<(String, f64)>,
    pub total: f64,
}

/// Evenly spaced voxel vectors of `v`, at most `count`.
pub(crate) fn latent_samples(v: &VelocityField, count: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let stride = (v.len() / count.max(1)).max(1);
    let idx: Vec<usize> = (0..v.len()).step_by(stride).take(count).collect();
    let samples = idx.iter().map(|&i| v.at(i).to_vec()).collect();
    (idx, samples)
}

/// Draws from the unit Gaussian prior, fixed by `seed`.
pub(crate) fn prior_samples(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// Evaluates the full objective at the cascade's mean deformation.
///
/// `recon_diff` sums one MI term per dense-block prefix. The segmentation term
/// needs both label sets; without them it is zero.
pub fn total_objective(
    m: &Volume3,
    f: &Volume3,
    s_f: Option<&LabelVolume>,
    s_a: Option<&LabelVolume>,
    state: &CascadeState,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveBreakdown> {
    ensure_same_dims(f.dims(), m.dims())?;
    let w = &cfg.weights;
    let omega = f.len() as f64;
    let mi = ParzenMi::new(f.data(), &cfg.mi);
    let chain = state.prefix_chain(f.dims())?;

    let recon_affine = -mi.mi(warp(m, &chain[0])?.data());
    let mut recon_diff = 0.0;
    for c in &chain[1..] {
        recon_diff -= mi.mi(warp(m, c)?.data());
    }
    let segmentation = match (s_f, s_a) {
        (Some(sf), Some(sa)) => segmentation_sim_loss(sf, &warp_labels_soft(sa, chain.last().unwrap())?)?,
        _ => 0.0,
    };

    let mut terms = vec![
        ("recon_diff".to_string(), w.recon_diff * recon_diff),
        ("recon_affine".to_string(), w.recon_affine * recon_affine),
        ("segmentation".to_string(), w.segmentation * segmentation),
    ];
    let (mut kl, mut smooth, mut mmd) = (Vec::new(), Vec::new(), Vec::new());
    for (k, block) in state.blocks.iter().enumerate() {
        match block {
            BlockParams::Generative(d) => {
                let v = kl_velocity_loss(d, &cfg.kl);
                terms.push((format!("kl_{}", k + 1), w.kl * v / omega));
                kl.push(v);
            }
            BlockParams::InfoVae(d) => {
                let (_, q) = latent_samples(&d.mu, cfg.mmd_samples);
                let p = prior_samples(q.len(), k as u64);
                let v = mmd_loss(&q, &p, cfg.mmd_bandwidth)?;
                terms.push((format!("mmd_{}", k + 1), w.mmd * v));
                mmd.push(v);
            }
            BlockParams::Deterministic(_) => {
                let v = smoothness_loss(&state.block_displacement(k));
                terms.push((format!("smooth_{}", k + 1), w.smooth * v / omega));
                smooth.push(v);
            }
        }
    }
    let total = terms.iter().map(|(_, v)| v).sum();
    Ok(ObjectiveBreakdown {
        recon_diff,
        recon_affine,
        segmentation,
        kl,
        smooth,
        mmd,
        terms,
        total,
    })
}
