use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::total_objective;
use crate::optimizer::{optimize_affine, optimize_dense_block, CascadeState, OptimizerConfig};
use crate::pipeline::{warp_labels_soft, RegistrationResult};
use crate::transform::{compose, folding_fraction, warp};
use crate::volume::{ensure_same_dims, LabelVolume, Volume3};

/// Interior margin used for the reported folding fraction.
pub const FOLDING_MARGIN: usize = 1;

/// Pairs patient labels with the atlas channels of the same names.
fn paired_labels(s_a: Option<&LabelVolume>, s_f: Option<&LabelVolume>) -> Result<Option<(LabelVolume, LabelVolume)>> {
    match (s_a, s_f) {
        (Some(a), Some(f)) => {
            ensure_same_dims(f.dims(), a.dims())?;
            Ok(Some((f.clone(), a.select(f.names())?)))
        }
        _ => Ok(None),
    }
}

/// Affine stage, then each dense block on the output of the stages before it.
///
/// Without patient labels the segmentation term is dropped (unsupervised).
/// A failure inside a stage returns [`Error::Aborted`] carrying the cascade
/// fitted so far.
pub fn optimize_cascade(
    m: &Volume3,
    f: &Volume3,
    s_a: Option<&LabelVolume>,
    s_f: Option<&LabelVolume>,
    cfg: &OptimizerConfig,
) -> Result<RegistrationResult> {
    ensure_same_dims(f.dims(), m.dims())?;
    if let Some(a) = s_a {
        ensure_same_dims(f.dims(), a.dims())?;
    }
    cfg.validate()?;
    let started = Instant::now();
    let dims = f.dims();
    let pairs = paired_labels(s_a, s_f)?;
    let mut state = CascadeState::identity(dims, cfg.blocks, cfg.mode, cfg.log_var_init, cfg.smoothing_sigma, cfg.steps)?;
    let objective = cfg.objective();
    let pair_refs = pairs.as_ref().map(|(f, a)| (f, a));
    let initial_objective = total_objective(m, f, pair_refs.map(|p| p.0), pair_refs.map(|p| p.1), &state, &objective)?;

    let abort = |stage: &str, source: Error, state: &CascadeState| Error::Aborted {
        stage: stage.to_string(),
        source: Box::new(source),
        partial: Box::new(state.clone()),
    };

    let affine = optimize_affine(m, f, cfg).map_err(|e| abort("affine", e, &state))?;
    state.affine = affine.params;
    let mut traces = affine.traces;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prefix = state.affine.to_displacement(dims)?;
    for k in 0..cfg.blocks {
        let stage = format!("dense_{}", k + 1);
        let m_cur = warp(m, &prefix)?;
        let labels_cur = match &pairs {
            Some((sf, sa)) => Some((sf, warp_labels_soft(sa, &prefix)?)),
            None => None,
        };
        let labels = labels_cur.as_ref().map(|(sf, sa)| (*sf, sa));
        let mut block = state.blocks[k].clone();
        let trace = optimize_dense_block(&stage, &m_cur, f, labels, &mut block, cfg, &mut rng).map_err(|e| abort(&stage, e, &state))?;
        state.blocks[k] = block;
        traces.push(trace);
        prefix = compose(&prefix, &state.block_displacement(k))?;
    }

    let composed = prefix;
    let final_objective = total_objective(m, f, pair_refs.map(|p| p.0), pair_refs.map(|p| p.1), &state, &objective)?;
    Ok(RegistrationResult {
        folding_fraction: folding_fraction(&composed, FOLDING_MARGIN),
        state,
        composed,
        traces,
        initial_objective,
        final_objective,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}
