//! Atlas segmentation end to end: register, carry the atlas labels through
//! the composed deformation, and score them against patient labels.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::ObjectiveBreakdown;
use crate::optimizer::{optimize_cascade, CascadeState, OptimizerConfig, StageTrace};
use crate::transform::{warp, AffineParams, DisplacementField, VelocityField};
use crate::volume::{ensure_same_dims, LabelVolume, Volume3};

/// Outcome of one registration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub state: CascadeState,
    /// `φ_aff ∘ φ_1 ∘ … ∘ φ_n` on the patient grid.
    pub composed: DisplacementField,
    pub traces: Vec<StageTrace>,
    /// Full objective at the identity cascade.
    pub initial_objective: ObjectiveBreakdown,
    /// Full objective at the fitted cascade (posterior means).
    pub final_objective: ObjectiveBreakdown,
    pub folding_fraction: f64,
    pub runtime_secs: f64,
}

impl RegistrationResult {
    pub fn affine(&self) -> &AffineParams {
        &self.state.affine
    }

    /// Smoothed mean velocity of every dense block.
    pub fn velocities(&self) -> Vec<VelocityField> {
        (0..self.state.blocks.len()).map(|k| self.state.block_velocity(k)).collect()
    }

    pub fn warp_image(&self, m: &Volume3) -> Result<Volume3> {
        warp(m, &self.composed)
    }
}

/// Registers `m` onto `f`; see [`optimize_cascade`].
pub fn register(
    m: &Volume3,
    f: &Volume3,
    s_a: Option<&LabelVolume>,
    s_f: Option<&LabelVolume>,
    cfg: &OptimizerConfig,
) -> Result<RegistrationResult> {
    optimize_cascade(m, f, s_a, s_f, cfg)
}

/// Every channel warped by `disp` with trilinear interpolation, unthresholded.
pub fn warp_labels_soft(labels: &LabelVolume, disp: &DisplacementField) -> Result<LabelVolume> {
    ensure_same_dims(disp.dims(), labels.dims())?;
    let channels = labels.channels().iter().map(|c| warp(c, disp)).collect::<Result<Vec<_>>>()?;
    LabelVolume::new(channels, labels.names().to_vec())
}

/// Hard masks from soft channels: each voxel goes to its largest channel
/// (lowest index on ties) when that value is at least 0.5.
pub fn exclusive_masks(soft: &LabelVolume) -> LabelVolume {
    let n = soft.dims().iter().product::<usize>();
    let mut data = vec![vec![0.0f32; n]; soft.len()];
    for i in 0..n {
        let mut best = (0usize, f32::NEG_INFINITY);
        for (c, ch) in soft.channels().iter().enumerate() {
            if ch.data()[i] > best.1 {
                best = (c, ch.data()[i]);
            }
        }
        if best.1 >= 0.5 {
            data[best.0][i] = 1.0;
        }
    }
    let channels = data
        .into_iter()
        .zip(soft.channels())
        .map(|(d, c)| Volume3::new(soft.dims(), d).unwrap().with_spacing(c.spacing()))
        .collect();
    LabelVolume::new(channels, soft.names().to_vec()).unwrap()
}

/// Soft warped channels, kept for the segmentation term, and their exclusive masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedLabels {
    pub soft: LabelVolume,
    pub masks: LabelVolume,
}

/// Carries every atlas channel through one displacement: composed once, warped per channel.
pub fn propagate_with(s_a: &LabelVolume, disp: &DisplacementField) -> Result<PropagatedLabels> {
    let soft = warp_labels_soft(s_a, disp)?;
    let masks = exclusive_masks(&soft);
    Ok(PropagatedLabels { soft, masks })
}

pub fn propagate_labels(s_a: &LabelVolume, result: &RegistrationResult) -> Result<PropagatedLabels> {
    propagate_with(s_a, &result.composed)
}

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "dice masks differ in length");
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        sa += usize::from(x);
        sb += usize::from(y);
    }
    if sa + sb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (sa + sb) as f64
    }
}

/// Dice of two volumes thresholded at 0.5.
pub fn dice_volumes(a: &Volume3, b: &Volume3) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    Ok(dice(&a.binarize(), &b.binarize()))
}

/// Intensity-weighted centroid of a volume in voxel coordinates.
pub fn centroid(v: &Volume3) -> [f64; 3] {
    let dims = v.dims();
    let mut acc = [0.0; 3];
    let mut mass = 0.0;
    for (i, g) in crate::volume::voxels(dims).enumerate() {
        let w = v.data()[i] as f64;
        mass += w;
        for a in 0..3 {
            acc[a] += w * g[a] as f64;
        }
    }
    acc.map(|s| s / mass)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMetric {
    pub label: String,
    /// Absent without patient labels.
    pub dice: Option<f64>,
    pub voxels_gt: Option<usize>,
    pub voxels_pred: usize,
}

/// Per-label scores plus deformation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<LabelMetric>,
    pub folding_fraction: f64,
    /// `(stage, first loss, last loss)`.
    pub stages: Vec<(String, f64, f64)>,
}

fn count(v: &Volume3) -> usize {
    v.binarize().iter().filter(|&&b| b).count()
}

impl MetricsTable {
    /// Scores `predicted` masks. With `s_f`, rows follow `subset` or else the
    /// patient channels; without it, every predicted channel is listed with no dice.
    pub fn compute(
        predicted: &LabelVolume,
        s_f: Option<&LabelVolume>,
        subset: Option<&[String]>,
        folding_fraction: f64,
    ) -> Result<Self> {
        let names: Vec<String> = match (subset, s_f) {
            (Some(s), _) => s.to_vec(),
            (None, Some(f)) => f.names().to_vec(),
            (None, None) => predicted.names().to_vec(),
        };
        let mut rows = Vec::with_capacity(names.len());
        for name in &names {
            let pred = predicted.channel(name).ok_or_else(|| Error::UnknownLabel {
                name: name.clone(),
                available: predicted.names().to_vec(),
            })?;
            let row = match s_f {
                Some(f) => {
                    ensure_same_dims(f.dims(), predicted.dims())?;
                    let gt = f.channel(name).ok_or_else(|| Error::UnknownLabel {
                        name: name.clone(),
                        available: f.names().to_vec(),
                    })?;
                    LabelMetric {
                        label: name.clone(),
                        dice: Some(dice(&gt.binarize(), &pred.binarize())),
                        voxels_gt: Some(count(gt)),
                        voxels_pred: count(pred),
                    }
                }
                None => LabelMetric {
                    label: name.clone(),
                    dice: None,
                    voxels_gt: None,
                    voxels_pred: count(pred),
                },
            };
            rows.push(row);
        }
        Ok(Self {
            rows,
            folding_fraction,
            stages: Vec::new(),
        })
    }

    pub fn mean_dice(&self) -> Option<f64> {
        let d: Vec<f64> = self.rows.iter().filter_map(|r| r.dice).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }

    /// `label,dice,voxels_gt,voxels_pred`, one row per label and a trailing `mean` row.
    /// Unavailable values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,dice,voxels_gt,voxels_pred\n");
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.label,
                opt(r.dice.map(|d| format!("{d:.6}"))),
                opt(r.voxels_gt.map(|v| v.to_string())),
                r.voxels_pred
            );
        }
        let _ = writeln!(out, "mean,{},,", opt(self.mean_dice().map(|d| format!("{d:.6}"))));
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        match self.mean_dice() {
            Some(d) => {
                let _ = writeln!(out, "mean dice {d:.4} over {} labels", self.rows.len());
            }
            None => {
                let _ = writeln!(out, "no patient labels: dice not computed ({} labels propagated)", self.rows.len());
            }
        }
        for r in &self.rows {
            match r.dice {
                Some(d) => {
                    let _ = writeln!(out, "  {:<16} dice {d:.4}", r.label);
                }
                None => {
                    let _ = writeln!(out, "  {:<16} {} voxels", r.label, r.voxels_pred);
                }
            }
        }
        let _ = writeln!(out, "folding fraction {:.6}", self.folding_fraction);
        for (stage, first, last) in &self.stages {
            let _ = writeln!(out, "  {stage:<16} loss {first:.6} -> {last:.6}");
        }
        out
    }
}

/// Metrics of a finished registration.
pub fn evaluate(
    result: &RegistrationResult,
    warped: &LabelVolume,
    s_f: Option<&LabelVolume>,
    subset: Option<&[String]>,
) -> Result<MetricsTable> {
    let mut table = MetricsTable::compute(warped, s_f, subset, result.folding_fraction)?;
    table.stages = result
        .traces
        .iter()
        .filter_map(|t| Some((t.stage.clone(), t.first()?, t.last()?)))
        .collect();
    Ok(table)
}

/// Loss traces as `stage,iteration,loss`.
pub fn traces_to_csv(traces: &[StageTrace]) -> String {
    let mut out = String::from("stage,iteration,loss\n");
    for t in traces {
        for (k, l) in t.losses.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.9e}", t.stage, k, l);
        }
    }
    out
}
