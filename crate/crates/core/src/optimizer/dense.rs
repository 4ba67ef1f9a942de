//! One dense block: Adam on a velocity field (or its Gaussian posterior)
//! against the image, label and regularization terms.
//!
//! Forward pass per iteration: draw `z`, smooth it, integrate, warp. The
//! backward pass is exact through MI, the trilinear warp and the smoothing.
//! Through the scaling-and-squaring flow the displacement force is carried to
//! the velocity by sampling it at the half-way point `y - v(y)/2`, the
//! leading-order transport of the force along the flow.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::kl::{kl_velocity_gradient, kl_velocity_loss, KlConfig};
use crate::losses::objective::latent_samples;
use crate::losses::regularizers::{median_bandwidth, mmd_with_gradient, smoothness_gradient, smoothness_loss};
use crate::losses::ParzenMi;
use crate::optimizer::{Adam, BlockParams, OptimizerConfig, StageTrace};
use crate::transform::{integrate_ss, warp_with_gradient, DisplacementField, Noise, VelocityField};
use crate::volume::{ensure_same_dims, smooth_field_adjoint, trilinear, voxels, LabelVolume, Volume3};

fn non_finite(stage: &str, term: &str) -> Error {
    Error::NonFinite {
        stage: stage.into(),
        term: term.into(),
    }
}

fn check(stage: &str, term: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(non_finite(stage, term))
    }
}

fn check_all(stage: &str, term: &str, g: &[Vec<f64>]) -> Result<()> {
    if g.iter().all(|c| c.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(non_finite(stage, term))
    }
}

/// Loss and displacement force of the image and label terms at `u`.
struct DataTerms {
    loss: f64,
    force: [Vec<f64>; 3],
}

fn data_terms(
    stage: &str,
    m: &Volume3,
    mi: &ParzenMi,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    u: &DisplacementField,
    cfg: &OptimizerConfig,
) -> Result<DataTerms> {
    let w = &cfg.weights;
    let n = u.len();
    let (x, grad_m) = warp_with_gradient(m, u)?;
    let (mi_value, d_mi) = mi.mi_with_gradient(&x);
    check(stage, "recon_diff", mi_value)?;
    let mut force: [Vec<f64>; 3] = std::array::from_fn(|a| (0..n).map(|i| -w.recon_diff * d_mi[i] * grad_m[a][i]).collect());
    let mut loss = -w.recon_diff * mi_value;

    if let Some((s_f, s_a)) = labels.filter(|_| w.segmentation > 0.0) {
        let scale = 1.0 / (n * s_f.len()) as f64;
        let mut sum = 0.0;
        for (target, atlas) in s_f.channels().iter().zip(s_a.channels()) {
            let (warped, grad_s) = warp_with_gradient(atlas, u)?;
            for i in 0..n {
                let r = target.data()[i] as f64 - warped[i];
                sum += r * r;
                for a in 0..3 {
                    force[a][i] -= w.segmentation * scale * r * grad_s[a][i];
                }
            }
        }
        let seg = 0.5 * scale * sum;
        check(stage, "segmentation", seg)?;
        loss += w.segmentation * seg;
    }
    check_all(stage, "recon_diff/segmentation gradient", &force)?;
    Ok(DataTerms { loss, force })
}

/// Pulls a displacement-space force back to velocity space at the half-way point.
fn transport(force: &[Vec<f64>; 3], v: &VelocityField) -> [Vec<f64>; 3] {
    let dims = v.dims();
    let mut out = [Vec::with_capacity(v.len()), Vec::with_capacity(v.len()), Vec::with_capacity(v.len())];
    for (i, g) in voxels(dims).enumerate() {
        let vi = v.at(i);
        let p = [g[0] as f64 - 0.5 * vi[0], g[1] as f64 - 0.5 * vi[1], g[2] as f64 - 0.5 * vi[2]];
        for a in 0..3 {
            out[a].push(trilinear(&force[a], dims, p));
        }
    }
    out
}

struct Sample {
    z: VelocityField,
    noise: Option<Noise>,
}

fn draw(block: &BlockParams, rng: &mut ChaCha8Rng) -> Sample {
    match block {
        BlockParams::Generative(d) | BlockParams::InfoVae(d) => {
            let (z, noise) = d.sample_with(rng);
            Sample { z, noise: Some(noise) }
        }
        BlockParams::Deterministic(v) => Sample { z: v.clone(), noise: None },
    }
}

/// Adam moments for every parameter plane of a block.
struct BlockAdam {
    planes: Vec<Adam>,
}

impl BlockAdam {
    fn new(block: &BlockParams, cfg: &OptimizerConfig) -> Self {
        let n = block.mean_velocity().len();
        let count = if block.distribution().is_some() { 6 } else { 3 };
        Self {
            planes: (0..count).map(|_| Adam::new(n, cfg.beta1, cfg.beta2, cfg.eps)).collect(),
        }
    }

    fn step(&mut self, block: &mut BlockParams, grads: &[Vec<f64>], lr: f64) {
        let dims = block.mean_velocity().dims();
        let update = |field: &mut VelocityField, adams: &mut [Adam], grads: &[Vec<f64>]| {
            let mut comps = std::mem::replace(field, VelocityField::zeros(dims).unwrap()).into_components();
            for a in 0..3 {
                adams[a].step(&mut comps[a], &grads[a], lr);
            }
            *field = VelocityField::from_parts(dims, comps);
        };
        match block {
            BlockParams::Deterministic(v) => update(v, &mut self.planes, grads),
            BlockParams::Generative(d) | BlockParams::InfoVae(d) => {
                let (mu_adam, lv_adam) = self.planes.split_at_mut(3);
                update(&mut d.mu, mu_adam, &grads[..3]);
                update(&mut d.log_var, lv_adam, &grads[3..]);
            }
        }
    }
}

/// Optimizes one block in place; returns the per-iteration loss.
///
/// `m` and `s_a` are the atlas image and labels already carried through the
/// preceding stages. `labels` pairs `S_F` with the atlas channels of the same
/// names; `None` drops the segmentation term.
pub fn optimize_dense_block(
    stage: &str,
    m: &Volume3,
    f: &Volume3,
    labels: Option<(&LabelVolume, &LabelVolume)>,
    block: &mut BlockParams,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StageTrace> {
    ensure_same_dims(f.dims(), m.dims())?;
    ensure_same_dims(f.dims(), block.mean_velocity().dims())?;
    if let Some((s_f, s_a)) = labels {
        ensure_same_dims(f.dims(), s_f.dims())?;
        ensure_same_dims(f.dims(), s_a.dims())?;
        if s_f.len() != s_a.len() {
            return Err(Error::ChannelMismatch {
                expected: s_f.len(),
                found: s_a.len(),
            });
        }
    }
    let dims = f.dims();
    let omega = f.len() as f64;
    let w = cfg.weights;
    let kl_cfg = KlConfig { lambda: cfg.kl_lambda };
    let mi = ParzenMi::new(f.data(), &cfg.mi());
    let mut adam = BlockAdam::new(block, cfg);
    let iterations = cfg.dense_iterations;
    let mut losses = Vec::with_capacity(iterations);

    for k in 0..iterations {
        let sample = draw(block, rng);
        let v = sample.z.gaussian_smooth(cfg.smoothing_sigma);
        let u = integrate_ss(&v, cfg.steps);
        let mut data = data_terms(stage, m, &mi, labels, &u, cfg)?;
        let mut loss = data.loss;

        // regularizers that act on the displacement share the transport below
        if let BlockParams::Deterministic(_) = block {
            let s = smoothness_loss(&u);
            check(stage, "smooth", s)?;
            loss += w.smooth * s / omega;
            let g = smoothness_gradient(&u);
            for a in 0..3 {
                for (f, d) in data.force[a].iter_mut().zip(&g[a]) {
                    *f += w.smooth * d / omega;
                }
            }
        }

        let g_v = transport(&data.force, &v);
        let g_z: Vec<Vec<f64>> = (0..3).map(|a| smooth_field_adjoint(&g_v[a], dims, cfg.smoothing_sigma)).collect();

        let grads: Vec<Vec<f64>> = match &*block {
            BlockParams::Deterministic(_) => g_z,
            BlockParams::Generative(d) | BlockParams::InfoVae(d) => {
                let noise = sample.noise.as_ref().expect("distribution blocks carry noise");
                let mut d_mu = g_z.clone();
                let mut d_lv: Vec<Vec<f64>> = (0..3)
                    .map(|a| {
                        let lv = d.log_var.component(a);
                        (0..lv.len()).map(|i| g_z[a][i] * noise[a][i] * 0.5 * (0.5 * lv[i]).exp()).collect()
                    })
                    .collect();
                if matches!(block, BlockParams::Generative(_)) {
                    let kl = kl_velocity_loss(d, &kl_cfg);
                    check(stage, "kl", kl)?;
                    loss += w.kl * kl / omega;
                    let (gm, gl) = kl_velocity_gradient(d, &kl_cfg);
                    for a in 0..3 {
                        for i in 0..d_mu[a].len() {
                            d_mu[a][i] += w.kl * gm.component(a)[i] / omega;
                            d_lv[a][i] += w.kl * gl.component(a)[i] / omega;
                        }
                    }
                } else {
                    let (idx, q) = latent_samples(&d.mu, cfg.mmd_samples);
                    let p: Vec<Vec<f64>> = (0..q.len())
                        .map(|_| (0..3).map(|_| StandardNormal.sample(&mut *rng)).collect())
                        .collect();
                    let h = cfg.mmd_bandwidth.unwrap_or_else(|| median_bandwidth(&q, &p));
                    let (mmd, gq) = mmd_with_gradient(&q, &p, h)?;
                    check(stage, "mmd", mmd)?;
                    loss += w.mmd * mmd;
                    for (j, &i) in idx.iter().enumerate() {
                        for a in 0..3 {
                            d_mu[a][i] += w.mmd * gq[j][a];
                        }
                    }
                }
                d_mu.extend(d_lv);
                d_mu
            }
        };
        check_all(stage, "velocity gradient", &grads)?;
        check(stage, "total", loss)?;
        losses.push(loss);
        adam.step(block, &grads, cfg.scheduled(cfg.learning_rate, k, iterations));
    }
    Ok(StageTrace {
        stage: stage.to_string(),
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Mode;
    use crate::transform::warp;
    use rand::SeedableRng;

    fn ball(dims: [usize; 3], c: [f64; 3], r: f64) -> Volume3 {
        Volume3::from_fn(dims, |g| {
            let d = ((g[0] as f64 - c[0]).powi(2) + (g[1] as f64 - c[1]).powi(2) + (g[2] as f64 - c[2]).powi(2)).sqrt();
            (0.5 - (d - r)).clamp(0.0, 1.0) as f32
        })
        .unwrap()
    }

    fn small_cfg(mode: Mode) -> OptimizerConfig {
        OptimizerConfig {
            mode,
            dense_iterations: 60,
            ..Default::default()
        }
    }

    #[test]
    fn identical_inputs_stay_near_identity() {
        let dims = [16, 16, 16];
        let f = ball(dims, [8.0, 7.5, 8.0], 4.0);
        let s = LabelVolume::new(vec![f.clone()], vec!["ball".into()]).unwrap();
        for mode in [Mode::Generative, Mode::NonGenerative, Mode::InfoVae] {
            let cfg = small_cfg(mode);
            let mut block = BlockParams::identity(dims, mode, cfg.log_var_init).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            optimize_dense_block("d1", &f, &f, Some((&s, &s)), &mut block, &cfg, &mut rng).unwrap();
            let v = block.mean_velocity().gaussian_smooth(cfg.smoothing_sigma);
            let u = integrate_ss(&v, cfg.steps);
            assert!(u.mean_norm() < 0.25, "{mode:?}: {}", u.mean_norm());
        }
    }

    #[test]
    fn shift_lowers_loss() {
        let dims = [20, 20, 20];
        let m = ball(dims, [9.0, 10.0, 10.0], 5.0);
        let f = ball(dims, [11.0, 10.0, 10.0], 5.0);
        let cfg = OptimizerConfig {
            dense_iterations: 80,
            ..small_cfg(Mode::NonGenerative)
        };
        let mut block = BlockParams::identity(dims, Mode::NonGenerative, cfg.log_var_init).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trace = optimize_dense_block("d1", &m, &f, None, &mut block, &cfg, &mut rng).unwrap();
        assert!(trace.losses.last().unwrap() < &trace.losses[0]);
        let u = integrate_ss(&block.mean_velocity().gaussian_smooth(cfg.smoothing_sigma), cfg.steps);
        let moved = warp(&m, &u).unwrap();
        let mi = ParzenMi::new(f.data(), &cfg.mi());
        assert!(mi.mi(moved.data()) > mi.mi(m.data()));
    }
}
