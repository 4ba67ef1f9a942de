//! Affine stage: Adam on twelve parameters with central-difference gradients,
//! run coarse to fine over a small image pyramid.
//!
//! The parameters live in normalized grid coordinates `q = (p - c) / s`, with
//! `c` the grid center and `s` the half extent, so that `q' = (I + D) q + τ`.
//! In these units a value means the same deformation at every pyramid level,
//! and linear and translation entries have comparable scale.

use crate::error::{Error, Result};
use crate::losses::{MiConfig, ParzenMi};
use crate::optimizer::{Adam, OptimizerConfig, StageTrace};
use crate::transform::AffineParams;
use crate::volume::{ensure_same_dims, voxels, Dims, Volume3};

fn frame(dims: Dims) -> ([f64; 3], [f64; 3]) {
    let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
    let s = c.map(|v| v.max(0.5));
    (c, s)
}

/// Voxel-space affine for normalized parameters `[D row-major (9), τ (3)]`.
pub fn from_normalized(psi: &[f64; 12], dims: Dims) -> AffineParams {
    let (c, s) = frame(dims);
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for k in 0..3 {
            let id = if r == k { 1.0 } else { 0.0 };
            m[r][k] = s[r] * (id + psi[3 * r + k]) / s[k];
        }
    }
    let mut t = [0.0; 3];
    for r in 0..3 {
        t[r] = c[r] + s[r] * psi[9 + r] - (0..3).map(|k| m[r][k] * c[k]).sum::<f64>();
    }
    AffineParams::from_parts(m, t)
}

/// Inverse of [`from_normalized`].
pub fn to_normalized(aff: &AffineParams, dims: Dims) -> [f64; 12] {
    let (c, s) = frame(dims);
    let m = aff.linear();
    let t = aff.offset();
    let mut psi = [0.0; 12];
    for r in 0..3 {
        for k in 0..3 {
            let id = if r == k { 1.0 } else { 0.0 };
            psi[3 * r + k] = m[r][k] * s[k] / s[r] - id;
        }
        let ac: f64 = (0..3).map(|k| m[r][k] * c[k]).sum();
        psi[9 + r] = (ac + t[r] - c[r]) / s[r];
    }
    psi
}

/// `-I(M ∘ A, F)` as a function of normalized affine parameters.
pub struct AffineObjective {
    moving: Volume3,
    mi: ParzenMi,
    dims: Dims,
}

impl AffineObjective {
    pub fn new(m: &Volume3, f: &Volume3, mi: &MiConfig) -> Result<Self> {
        ensure_same_dims(f.dims(), m.dims())?;
        mi.validate()?;
        Ok(Self {
            moving: m.clone(),
            mi: ParzenMi::new(f.data(), mi),
            dims: f.dims(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn loss(&self, psi: &[f64; 12]) -> f64 {
        let aff = from_normalized(psi, self.dims);
        let warped: Vec<f64> = voxels(self.dims)
            .map(|g| self.moving.sample_trilinear(aff.apply([g[0] as f64, g[1] as f64, g[2] as f64])))
            .collect();
        -self.mi.mi(&warped)
    }

    /// Central differences with step `h` on every parameter.
    pub fn fd_gradient(&self, psi: &[f64; 12], h: f64) -> [f64; 12] {
        std::array::from_fn(|i| {
            let mut up = *psi;
            let mut down = *psi;
            up[i] += h;
            down[i] -= h;
            (self.loss(&up) - self.loss(&down)) / (2.0 * h)
        })
    }
}

/// Grid of pyramid level `level` (0 = full resolution).
fn level_dims(dims: Dims, level: usize) -> Dims {
    dims.map(|n| if n <= 8 { n } else { ((n - 1) >> level).max(7) + 1 })
}

fn downsample(v: &Volume3, dims: Dims, level: usize) -> Result<Volume3> {
    if level == 0 || dims == v.dims() {
        return Ok(v.clone());
    }
    v.gaussian_smooth((1u32 << (level - 1)) as f64).resample(dims)
}

/// Fitted affine with the per-iteration loss of every pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineOutcome {
    pub params: AffineParams,
    pub traces: Vec<StageTrace>,
}

/// Minimizes `-I(M ∘ φ_aff, F)`. Each level returns its best recorded
/// parameters, which seed the next finer level unless the identity scores
/// better there: smoothing can bias coarse optima away from an exact match.
pub fn optimize_affine(m: &Volume3, f: &Volume3, cfg: &OptimizerConfig) -> Result<AffineOutcome> {
    ensure_same_dims(f.dims(), m.dims())?;
    cfg.validate()?;
    let mut psi = [0.0; 12];
    let mut traces = Vec::new();
    let levels = cfg.affine_levels;
    for (rank, level) in (0..levels).rev().enumerate() {
        let dims = level_dims(f.dims(), level);
        if level > 0 && dims == level_dims(f.dims(), level - 1) {
            continue;
        }
        let objective = AffineObjective::new(&downsample(m, dims, level)?, &downsample(f, dims, level)?, &cfg.mi())?;
        if psi != [0.0; 12] && objective.loss(&[0.0; 12]) < objective.loss(&psi) {
            psi = [0.0; 12];
        }
        let iterations = (cfg.affine_iterations >> (2 * rank)).max(1);
        let lr = cfg.affine_learning_rate / (1u32 << rank) as f64;
        let mut adam = Adam::new(12, cfg.beta1, cfg.beta2, cfg.eps);
        let mut losses = Vec::with_capacity(iterations + 1);
        let mut best = (f64::INFINITY, psi);
        for k in 0..=iterations {
            let loss = objective.loss(&psi);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("affine level {level}"),
                    term: "recon_affine".into(),
                });
            }
            losses.push(loss);
            if loss < best.0 {
                best = (loss, psi);
            }
            if k == iterations {
                break;
            }
            let grad = objective.fd_gradient(&psi, cfg.fd_step);
            adam.step(&mut psi, &grad, cfg.scheduled(lr, k, iterations));
        }
        psi = best.1;
        traces.push(StageTrace {
            stage: format!("affine_l{level}"),
            losses,
        });
    }
    Ok(AffineOutcome {
        params: from_normalized(&psi, f.dims()),
        traces,
    })
}
