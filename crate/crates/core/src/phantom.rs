//! Synthetic atlas/patient pairs with analytically known deformations.
//!
//! A scene is a stack of primitives rendered with a one-voxel smoothstep edge;
//! later primitives cover earlier ones. The patient is rendered by evaluating
//! the same primitives at the backward-mapped position of each voxel, never by
//! resampling the atlas, so it carries no interpolation error.
//!
//! Deformations are listed in the order they act on the atlas. The ground
//! truth is the backward displacement `u(y) = B(y) - y`, so that
//! `warp(atlas, u)` reproduces the patient.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::dice_volumes;
use crate::transform::{jacobian_determinants, DisplacementField};
use crate::volume::{check_dims, smooth_field, trilinear, voxels, Dims, LabelVolume, Volume3};

type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: P3, b: P3) -> P3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: P3, s: f64) -> P3 {
    a.map(|v| v * s)
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: P3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Primitive {
    Sphere { center: P3, radius: f64 },
    /// Axis-aligned.
    Ellipsoid { center: P3, radii: P3 },
    /// Axis-aligned.
    Box { center: P3, half_extents: P3 },
    /// Capsule around the segment `start`–`end`.
    Tube { start: P3, end: P3, radius: f64 },
}

impl Primitive {
    /// Signed distance, negative inside. Ellipsoids use a first-order approximation.
    pub fn signed_distance(&self, p: P3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => norm(sub(p, center)) - radius,
            Primitive::Ellipsoid { center, radii } => {
                let q = sub(p, center);
                let k0 = norm([q[0] / radii[0], q[1] / radii[1], q[2] / radii[2]]);
                let k1 = norm([q[0] / (radii[0] * radii[0]), q[1] / (radii[1] * radii[1]), q[2] / (radii[2] * radii[2])]);
                if k1 == 0.0 {
                    -radii.iter().cloned().fold(f64::INFINITY, f64::min)
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
            Primitive::Box { center, half_extents } => {
                let q: P3 = std::array::from_fn(|a| (p[a] - center[a]).abs() - half_extents[a]);
                let outside = norm(q.map(|v| v.max(0.0)));
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Tube { start, end, radius } => {
                let ab = sub(end, start);
                let ap = sub(p, start);
                let len2 = dot(ab, ab);
                let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                norm(sub(ap, scale(ab, t))) - radius
            }
        }
    }

    /// Smoothstep occupancy over a one-voxel band centered on the surface.
    pub fn occupancy(&self, p: P3) -> f64 {
        let s = (0.5 - self.signed_distance(p)).clamp(0.0, 1.0);
        s * s * (3.0 - 2.0 * s)
    }

    fn bounds(&self) -> (P3, P3) {
        match *self {
            Primitive::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Primitive::Ellipsoid { center, radii } | Primitive::Box { center, half_extents: radii } => {
                (sub(center, radii), add(center, radii))
            }
            Primitive::Tube { start, end, radius } => (
                std::array::from_fn(|a| start[a].min(end[a]) - radius),
                std::array::from_fn(|a| start[a].max(end[a]) + radius),
            ),
        }
    }

    fn sizes_positive(&self) -> bool {
        match *self {
            Primitive::Sphere { radius, .. } | Primitive::Tube { radius, .. } => radius > 0.0,
            Primitive::Ellipsoid { radii, .. } | Primitive::Box { half_extents: radii, .. } => radii.iter().all(|&r| r > 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    /// Label channel the shape belongs to; shapes may share one.
    pub label: String,
    pub intensity: f64,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Deformation {
    /// Moves content by `offset` voxels.
    Translation { offset: P3 },
    /// Right-handed rotation about `axis` through `center` (grid center if absent).
    Rotation {
        axis: P3,
        degrees: f64,
        #[serde(default)]
        center: Option<P3>,
    },
    UniformScale {
        factor: f64,
        #[serde(default)]
        center: Option<P3>,
    },
    /// Moves points radially by `amplitude (r/R) exp((1 - r²/R²)/2)`, which
    /// peaks at `amplitude` on the sphere of radius `R` about `center`.
    RadialSwell { center: P3, radius: f64, amplitude: f64 },
    /// Smoothed Gaussian noise used directly as the backward displacement,
    /// scaled so its largest vector has length `max_amp`.
    SmoothRandom { seed: u64, sigma: f64, max_amp: f64 },
    /// Shifts x by `curvature (z - c_z)²`, bending the volume along z.
    Bend {
        curvature: f64,
        #[serde(default)]
        center: Option<P3>,
    },
}

/// Largest `|amplitude| / radius` for which the radial swell stays invertible.
/// Outward: `1 + (A/R) min_s s e^{s/2} > 0` with minimum `-2/e`.
pub const SWELL_MAX_OUTWARD: f64 = std::f64::consts::E / 2.0;
/// Inward: `1 - (|A|/R) e^{1/2} > 0`.
pub const SWELL_MAX_INWARD: f64 = 0.606_530_659_712_633_4;

fn swell_offset(r: f64, radius: f64, amplitude: f64) -> f64 {
    let rho = r / radius;
    amplitude * rho * (0.5 * (1.0 - rho * rho)).exp()
}

fn rotation_matrix(axis: P3, degrees: f64) -> [[f64; 3]; 3] {
    let n = norm(axis);
    let k = axis.map(|v| v / n);
    let (s, c) = degrees.to_radians().sin_cos();
    let t = 1.0 - c;
    [
        [c + k[0] * k[0] * t, k[0] * k[1] * t - k[2] * s, k[0] * k[2] * t + k[1] * s],
        [k[1] * k[0] * t + k[2] * s, c + k[1] * k[1] * t, k[1] * k[2] * t - k[0] * s],
        [k[2] * k[0] * t - k[1] * s, k[2] * k[1] * t + k[0] * s, c + k[2] * k[2] * t],
    ]
}

/// One deformation prepared for backward evaluation.
enum Backward {
    Shift(P3),
    Linear { m: [[f64; 3]; 3], center: P3 },
    Swell { center: P3, radius: f64, amplitude: f64 },
    Field { dims: Dims, comps: [Vec<f64>; 3] },
    Bend { curvature: f64, center: P3 },
}

impl Backward {
    fn apply(&self, p: P3) -> P3 {
        match self {
            Backward::Shift(t) => sub(p, *t),
            Backward::Linear { m, center } => {
                let q = sub(p, *center);
                add(*center, std::array::from_fn(|r| dot(m[r], q)))
            }
            Backward::Swell { center, radius, amplitude } => {
                let q = sub(p, *center);
                let r_out = norm(q);
                if r_out == 0.0 {
                    return p;
                }
                // forward radius r + g(r) is increasing; bisect for its inverse
                let (mut lo, mut hi) = (0.0, r_out + amplitude.abs() + 1.0);
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    if mid + swell_offset(mid, *radius, *amplitude) < r_out {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                add(*center, scale(q, 0.5 * (lo + hi) / r_out))
            }
            Backward::Field { dims, comps } => add(p, std::array::from_fn(|a| trilinear(&comps[a], *dims, p))),
            Backward::Bend { curvature, center } => {
                let dz = p[2] - center[2];
                [p[0] - curvature * dz * dz, p[1], p[2]]
            }
        }
    }
}

/// Backward map `B = B_1 ∘ … ∘ B_n` of a deformation list.
pub struct BackwardMap {
    stages: Vec<Backward>,
}

impl BackwardMap {
    pub fn new(deformations: &[Deformation], dims: Dims) -> Result<Self> {
        let grid_center = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let bad = |msg: String| Err(Error::Phantom(msg));
        let mut stages = Vec::with_capacity(deformations.len());
        for d in deformations {
            let stage = match *d {
                Deformation::Translation { offset } => Backward::Shift(offset),
                Deformation::Rotation { axis, degrees, center } => {
                    if !(norm(axis) > 0.0) {
                        return bad("rotation axis must be non-zero".into());
                    }
                    // inverse rotation is the transpose
                    let m = rotation_matrix(axis, degrees);
                    let mt = std::array::from_fn(|r| std::array::from_fn(|c| m[c][r]));
                    Backward::Linear {
                        m: mt,
                        center: center.unwrap_or(grid_center),
                    }
                }
                Deformation::UniformScale { factor, center } => {
                    if !(factor > 0.0) {
                        return bad(format!("scale factor must be positive, got {factor}"));
                    }
                    let s = 1.0 / factor;
                    Backward::Linear {
                        m: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
                        center: center.unwrap_or(grid_center),
                    }
                }
                Deformation::RadialSwell { center, radius, amplitude } => {
                    if !(radius > 0.0) {
                        return bad(format!("swell radius must be positive, got {radius}"));
                    }
                    let ratio = amplitude / radius;
                    if ratio >= SWELL_MAX_OUTWARD || -ratio >= SWELL_MAX_INWARD {
                        return bad(format!(
                            "swell amplitude/radius {ratio:.3} outside the invertible range (-{SWELL_MAX_INWARD:.3}, {SWELL_MAX_OUTWARD:.3})"
                        ));
                    }
                    Backward::Swell { center, radius, amplitude }
                }
                Deformation::SmoothRandom { seed, sigma, max_amp } => {
                    if !(sigma > 0.0) || !(max_amp >= 0.0) {
                        return bad("smooth-random needs sigma > 0 and max_amp >= 0".into());
                    }
                    let field = smooth_random_field(dims, seed, sigma, max_amp)?;
                    let min_det = jacobian_determinants(&field).into_iter().fold(f64::INFINITY, f64::min);
                    if !(min_det > 0.0) {
                        return bad(format!(
                            "smooth-random field folds (min jacobian {min_det:.3}); lower max_amp or raise sigma"
                        ));
                    }
                    Backward::Field {
                        dims,
                        comps: field.into_components(),
                    }
                }
                Deformation::Bend { curvature, center } => {
                    if !curvature.is_finite() {
                        return bad("bend curvature must be finite".into());
                    }
                    Backward::Bend {
                        curvature,
                        center: center.unwrap_or(grid_center),
                    }
                }
            };
            stages.push(stage);
        }
        Ok(Self { stages })
    }

    pub fn apply(&self, p: P3) -> P3 {
        self.stages.iter().rev().fold(p, |q, s| s.apply(q))
    }
}

/// Seeded white noise, smoothed per component and scaled to a maximum vector length.
pub fn smooth_random_field(dims: Dims, seed: u64, sigma: f64, max_amp: f64) -> Result<DisplacementField> {
    check_dims(dims)?;
    let n = dims.iter().product::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: [Vec<f64>; 3] = std::array::from_fn(|_| {
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        smooth_field(&noise, dims, sigma)
    });
    let field = DisplacementField::from_components(dims, comps)?;
    let peak = field.max_norm();
    Ok(if peak > 0.0 { field.scaled(max_amp / peak) } else { field })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default = "default_dims")]
    pub dims: Dims,
    #[serde(default)]
    pub background: f64,
    pub shapes: Vec<Shape>,
    /// Applied to the atlas in list order; empty means identity.
    #[serde(default)]
    pub deformation: Vec<Deformation>,
}

fn default_dims() -> Dims {
    [64, 64, 64]
}

/// Names accepted by [`PhantomSpec::preset`].
pub const PRESETS: [&str; 7] = ["identity", "translation", "rotation", "swell", "bend", "translate-swell", "random"];

impl PhantomSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Phantom(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("phantom spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(self.dims)?;
        if self.shapes.is_empty() {
            return Err(Error::Phantom("scene has no shapes".into()));
        }
        for s in &self.shapes {
            if !s.primitive.sizes_positive() {
                return Err(Error::Phantom(format!("shape `{}` has a non-positive size", s.label)));
            }
            let (lo, hi) = s.primitive.bounds();
            let inside = (0..3).all(|a| lo[a] >= 0.0 && hi[a] <= self.dims[a] as f64 - 1.0);
            if !inside {
                return Err(Error::Phantom(format!("shape `{}` extends past the grid {:?}", s.label, self.dims)));
            }
        }
        BackwardMap::new(&self.deformation, self.dims).map(|_| ())
    }

    /// Distinct label names in first-appearance order.
    pub fn label_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in &self.shapes {
            if !names.contains(&s.label) {
                names.push(s.label.clone());
            }
        }
        names
    }

    /// A head-like scene: body, skull shell, two eyes, a spine tube and a
    /// central organ, scaled to `dims`.
    pub fn scene(dims: Dims) -> Vec<Shape> {
        let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let s = dims.map(|n| n as f64 / 64.0);
        let at = |dx: f64, dy: f64, dz: f64| [c[0] + dx * s[0], c[1] + dy * s[1], c[2] + dz * s[2]];
        let shape = |label: &str, intensity: f64, primitive| Shape {
            label: label.into(),
            intensity,
            primitive,
        };
        vec![
            shape("body", 0.35, Primitive::Ellipsoid { center: at(0.0, 0.0, 0.0), radii: [24.0 * s[0], 22.0 * s[1], 26.0 * s[2]] }),
            shape("spine", 0.9, Primitive::Tube { start: at(0.0, 11.0, -20.0), end: at(0.0, 11.0, 4.0), radius: 3.5 * s[0] }),
            shape("organ", 0.7, Primitive::Sphere { center: at(-1.0, -2.0, 2.0), radius: 8.0 * s[0] }),
            shape("left_eye", 0.55, Primitive::Sphere { center: at(-9.0, -14.0, 12.0), radius: 3.5 * s[0] }),
            shape("right_eye", 0.55, Primitive::Sphere { center: at(9.0, -14.0, 12.0), radius: 3.5 * s[0] }),
            shape("block", 0.15, Primitive::Box { center: at(8.0, 4.0, -12.0), half_extents: [4.4 * s[0], 3.4 * s[1], 5.4 * s[2]] }),
        ]
    }

    /// Built-in scenes paired with one of the canonical deformations; see [`PRESETS`].
    pub fn preset(name: &str, dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let s = dims[0] as f64 / 64.0;
        let shapes = Self::scene(dims);
        let organ = match shapes[2].primitive {
            Primitive::Sphere { center, radius } => (center, radius),
            _ => unreachable!(),
        };
        let swell = Deformation::RadialSwell {
            center: organ.0,
            radius: organ.1,
            amplitude: 0.2 * organ.1,
        };
        let deformation = match name {
            "identity" => vec![],
            "translation" => vec![Deformation::Translation { offset: [5.0, 3.0, -2.0] }],
            "rotation" => vec![Deformation::Rotation {
                axis: [0.0, 0.0, 1.0],
                degrees: 10.0,
                center: None,
            }],
            "swell" => vec![swell],
            "bend" => vec![Deformation::Bend {
                curvature: 0.008 / s,
                center: Some(c),
            }],
            "translate-swell" => vec![swell, Deformation::Translation { offset: [2.0 * s, -1.5 * s, 1.0 * s] }],
            "random" => vec![Deformation::SmoothRandom {
                seed: 7,
                sigma: 4.0 * s,
                max_amp: 2.0 * s,
            }],
            other => {
                return Err(Error::Phantom(format!("unknown preset `{other}`; available: {}", PRESETS.join(", "))));
            }
        };
        let spec = Self {
            dims,
            background: 0.0,
            shapes,
            deformation,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One generated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub atlas: Volume3,
    pub patient: Volume3,
    pub atlas_labels: LabelVolume,
    pub patient_labels: LabelVolume,
    /// Backward displacement: `warp(atlas, ground_truth)` ≈ `patient`.
    pub ground_truth: DisplacementField,
}

/// Image and labels of the scene evaluated at `map(g)` for every voxel `g`.
fn render(spec: &PhantomSpec, map: impl Fn(P3) -> P3) -> Result<(Volume3, LabelVolume)> {
    let dims = spec.dims;
    let n = dims.iter().product::<usize>();
    let names = spec.label_names();
    let channel_of: Vec<usize> = spec.shapes.iter().map(|s| names.iter().position(|x| *x == s.label).unwrap()).collect();
    let mut image = vec![0.0f32; n];
    let mut labels = vec![vec![0.0f32; n]; names.len()];
    let mut occ = vec![0.0; spec.shapes.len()];
    for (i, g) in voxels(dims).enumerate() {
        let p = map([g[0] as f64, g[1] as f64, g[2] as f64]);
        for (o, s) in occ.iter_mut().zip(&spec.shapes) {
            *o = s.primitive.occupancy(p);
        }
        // painter's order: a shape is covered by everything drawn after it
        let mut cover = 1.0;
        let mut value = 0.0;
        for k in (0..spec.shapes.len()).rev() {
            let visible = occ[k] * cover;
            value += spec.shapes[k].intensity * visible;
            labels[channel_of[k]][i] += visible as f32;
            cover *= 1.0 - occ[k];
        }
        image[i] = (value + spec.background * cover) as f32;
    }
    let channels = labels.into_iter().map(|d| Volume3::new(dims, d)).collect::<Result<Vec<_>>>()?;
    Ok((Volume3::new(dims, image)?, LabelVolume::new(channels, names)?))
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let backward = BackwardMap::new(&spec.deformation, spec.dims)?;
    let (atlas, atlas_labels) = render(spec, |p| p)?;
    let (patient, patient_labels) = if spec.deformation.is_empty() {
        (atlas.clone(), atlas_labels.clone())
    } else {
        render(spec, |p| backward.apply(p))?
    };
    let ground_truth = DisplacementField::from_fn(spec.dims, |g| {
        let p = [g[0] as f64, g[1] as f64, g[2] as f64];
        sub(backward.apply(p), p)
    })?;
    Ok(Phantom {
        atlas,
        patient,
        atlas_labels,
        patient_labels,
        ground_truth,
    })
}

/// Dice of every label between atlas and patient before registration.
pub fn initial_dice(spec: &PhantomSpec) -> Result<Vec<(String, f64)>> {
    let p = generate(spec)?;
    p.atlas_labels
        .names()
        .iter()
        .zip(p.atlas_labels.channels().iter().zip(p.patient_labels.channels()))
        .map(|(name, (a, b))| Ok((name.clone(), dice_volumes(a, b)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::centroid;
    use crate::transform::{jacobian_det, warp};
    use approx::assert_relative_eq;

    fn single_sphere(dims: Dims, center: P3, radius: f64, deformation: Vec<Deformation>) -> PhantomSpec {
        PhantomSpec {
            dims,
            background: 0.0,
            shapes: vec![Shape {
                label: "s".into(),
                intensity: 1.0,
                primitive: Primitive::Sphere { center, radius },
            }],
            deformation,
        }
    }

    #[test]
    fn identity_is_bitwise() {
        let spec = PhantomSpec::preset("identity", [24, 24, 24]).unwrap();
        let p = generate(&spec).unwrap();
        assert_eq!(p.atlas, p.patient);
        let with_zero = PhantomSpec {
            deformation: vec![Deformation::Translation { offset: [0.0; 3] }],
            ..spec.clone()
        };
        let q = generate(&with_zero).unwrap();
        assert_eq!(q.atlas.data(), q.patient.data());
        assert!(initial_dice(&spec).unwrap().iter().all(|(_, d)| *d == 1.0));
    }

    #[test]
    fn translation_shifts_centroid_exactly() {
        let spec = single_sphere([32, 32, 32], [14.0, 15.0, 16.0], 5.0, vec![Deformation::Translation { offset: [5.0, 3.0, -2.0] }]);
        let p = generate(&spec).unwrap();
        let a = centroid(&p.atlas_labels.channels()[0]);
        let b = centroid(&p.patient_labels.channels()[0]);
        for k in 0..3 {
            assert_relative_eq!(b[k] - a[k], [5.0, 3.0, -2.0][k], epsilon = 1e-9);
        }
    }

    #[test]
    fn translation_by_diameter_is_disjoint() {
        let spec = single_sphere([40, 24, 24], [10.0, 12.0, 12.0], 5.0, vec![Deformation::Translation { offset: [11.0, 0.0, 0.0] }]);
        assert_eq!(initial_dice(&spec).unwrap()[0].1, 0.0);
    }

    #[test]
    fn swell_volume_ratio_and_jacobian() {
        let r = 8.0;
        let spec = single_sphere(
            [40, 40, 40],
            [19.5, 19.5, 19.5],
            r,
            vec![Deformation::RadialSwell {
                center: [19.5, 19.5, 19.5],
                radius: r,
                amplitude: 0.2 * r,
            }],
        );
        let p = generate(&spec).unwrap();
        assert!(jacobian_det(&p.ground_truth).data().iter().all(|&d| d > 0.0));
        let ratio = p.patient_labels.channels()[0].sum() / p.atlas_labels.channels()[0].sum();
        assert!((ratio / 1.728 - 1.0).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn swell_bound_enforced() {
        let too_much = |a: f64| {
            single_sphere([20, 20, 20], [10.0; 3], 4.0, vec![Deformation::RadialSwell { center: [10.0; 3], radius: 4.0, amplitude: a }]).validate()
        };
        assert!(too_much(4.0 * 1.3).is_ok());
        assert!(too_much(4.0 * 1.4).is_err());
        assert!(too_much(-4.0 * 0.7).is_err());
    }

    #[test]
    fn ground_truth_reproduces_patient() {
        let cfg = crate::losses::MiConfig::default();
        for preset in ["translation", "rotation", "swell", "bend", "random"] {
            let p = generate(&PhantomSpec::preset(preset, [32, 32, 32]).unwrap()).unwrap();
            let warped = warp(&p.atlas, &p.ground_truth).unwrap();
            let mi = crate::losses::mutual_information(&warped, &p.patient, &cfg).unwrap();
            let h = crate::losses::self_information(&p.patient, &cfg);
            assert!(mi >= 0.95 * h, "{preset}: {mi} vs {h}");
        }
    }

    #[test]
    fn rotation_backward_is_inverse() {
        let b = BackwardMap::new(
            &[Deformation::Rotation {
                axis: [0.0, 0.0, 1.0],
                degrees: 90.0,
                center: Some([0.0; 3]),
            }],
            [8, 8, 8],
        )
        .unwrap();
        // content rotated +90° about z: the patient point (0,1,0) came from (1,0,0)
        let q = b.apply([0.0, 1.0, 0.0]);
        assert_relative_eq!(q[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(q[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spec_toml_round_trip_and_errors() {
        let spec = PhantomSpec::preset("translate-swell", [32, 32, 32]).unwrap();
        let again = PhantomSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(again, spec);
        let outside = single_sphere([10, 10, 10], [2.0, 5.0, 5.0], 4.0, vec![]);
        assert!(matches!(outside.validate(), Err(Error::Phantom(_))));
        assert!(PhantomSpec::preset("nope", [16, 16, 16]).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = PhantomSpec::preset("random", [20, 20, 20]).unwrap();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn labels_partition_coverage() {
        let p = generate(&PhantomSpec::preset("identity", [32, 32, 32]).unwrap()).unwrap();
        for i in 0..p.atlas.len() {
            let s: f32 = p.atlas_labels.channels().iter().map(|c| c.data()[i]).sum();
            assert!(s <= 1.0 + 1e-5);
        }
    }
}
