//! Image and label similarity terms. Image terms are negated MI so that
//! minimizing the loss maximizes similarity.

use crate::error::{Error, Result};
use crate::losses::mi::{MiConfig, ParzenMi};
use crate::transform::{compose, warp, AffineParams, DisplacementField};
use crate::volume::{ensure_same_dims, LabelVolume, Volume3};

/// `-I(M ∘ φ_aff, F)`.
pub fn recon_affine_loss(m: &Volume3, f: &Volume3, aff: &AffineParams, cfg: &MiConfig) -> Result<f64> {
    ensure_same_dims(f.dims(), m.dims())?;
    let moved = warp(m, &aff.to_displacement(f.dims())?)?;
    Ok(-ParzenMi::new(f.data(), cfg).mi(moved.data()))
}

/// `-Σ_k I(M ∘ φ_aff ∘ φ_1 ∘ … ∘ φ_k, F)` over every prefix of the dense chain.
pub fn recon_diff_loss(
    m: &Volume3,
    f: &Volume3,
    aff: &AffineParams,
    dense: &[DisplacementField],
    cfg: &MiConfig,
) -> Result<f64> {
    ensure_same_dims(f.dims(), m.dims())?;
    let mi = ParzenMi::new(f.data(), cfg);
    let mut chain = aff.to_displacement(f.dims())?;
    let mut total = 0.0;
    for d in dense {
        chain = compose(&chain, d)?;
        total -= mi.mi(warp(m, &chain)?.data());
    }
    Ok(total)
}

/// `(1 / 2ΩK) Σ_channels Σ_voxels (S_F − S_A')²`.
pub fn segmentation_sim_loss(s_f: &LabelVolume, s_a_warped: &LabelVolume) -> Result<f64> {
    if s_f.len() != s_a_warped.len() {
        return Err(Error::ChannelMismatch {
            expected: s_f.len(),
            found: s_a_warped.len(),
        });
    }
    ensure_same_dims(s_f.dims(), s_a_warped.dims())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in s_f.channels().iter().zip(s_a_warped.channels()) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        count += a.len();
    }
    Ok(sum / (2.0 * count as f64))
}
