use std::marker::PhantomData;

use crate::error::{Error, Result};
use crate::volume::{check_dims, ensure_same_dims, linear_index, voxel_count, voxels, Cell, Dims, Volume3};

/// Marker for velocity fields (voxels per unit flow time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Velocity {}

/// Marker for displacement fields: `phi(g) = g + u(g)`, in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Displacement {}

/// A voxel-wise 3-vector field, stored as three x-fastest component planes.
#[derive(Debug, PartialEq)]
pub struct Field3<K> {
    dims: Dims,
    comps: [Vec<f64>; 3],
    _kind: PhantomData<K>,
}

impl<K> Clone for Field3<K> {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims,
            comps: self.comps.clone(),
            _kind: PhantomData,
        }
    }
}

pub type VelocityField = Field3<Velocity>;
pub type DisplacementField = Field3<Displacement>;

impl<K> Field3<K> {
    pub fn zeros(dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        let n = voxel_count(dims);
        Ok(Self::from_parts(dims, [vec![0.0; n], vec![0.0; n], vec![0.0; n]]))
    }

    pub fn from_components(dims: Dims, comps: [Vec<f64>; 3]) -> Result<Self> {
        check_dims(dims)?;
        let expected = voxel_count(dims);
        for c in &comps {
            if c.len() != expected {
                return Err(Error::DataLength {
                    dims,
                    expected,
                    found: c.len(),
                });
            }
        }
        Ok(Self::from_parts(dims, comps))
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 3]) -> [f64; 3]) -> Result<Self> {
        check_dims(dims)?;
        let n = voxel_count(dims);
        let mut comps = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for g in voxels(dims) {
            let v = f(g);
            for a in 0..3 {
                comps[a].push(v[a]);
            }
        }
        Ok(Self::from_parts(dims, comps))
    }

    pub(crate) fn from_parts(dims: Dims, comps: [Vec<f64>; 3]) -> Self {
        Self {
            dims,
            comps,
            _kind: PhantomData,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.comps
    }

    pub fn into_components(self) -> [Vec<f64>; 3] {
        self.comps
    }

    #[inline]
    pub fn at(&self, i: usize) -> [f64; 3] {
        [self.comps[0][i], self.comps[1][i], self.comps[2][i]]
    }

    pub fn at_voxel(&self, g: [usize; 3]) -> [f64; 3] {
        self.at(linear_index(self.dims, g[0], g[1], g[2]))
    }

    /// Trilinear sample of all three components (clamped at the boundary).
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let cell = Cell::new(self.dims, p);
        [cell.eval(&self.comps[0]), cell.eval(&self.comps[1]), cell.eval(&self.comps[2])]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_parts(self.dims, self.comps.clone().map(|c| c.into_iter().map(|v| v * s).collect()))
    }

    pub fn map_components(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self::from_parts(self.dims, [f(&self.comps[0]), f(&self.comps[1]), f(&self.comps[2])])
    }

    /// Reinterpret as another field kind (e.g. velocity of a constant-in-time flow as a displacement).
    pub fn cast<L>(self) -> Field3<L> {
        Field3::from_parts(self.dims, self.comps)
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| {
            let v = self.at(i);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Per-component Gaussian smoothing (sigma in voxels).
    pub fn gaussian_smooth(&self, sigma: f64) -> Self {
        self.map_components(|c| crate::volume::smooth_field(c, self.dims, sigma))
    }

    pub fn component_volume(&self, axis: usize) -> Volume3 {
        Volume3::from_f64(self.dims, &self.comps[axis])
    }
}

impl DisplacementField {
    /// `(outer ∘ inner)(g) = g + u_inner(g) + u_outer(g + u_inner(g))`.
    pub fn compose(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
        ensure_same_dims(outer.dims, inner.dims)?;
        let dims = inner.dims;
        let n = inner.len();
        let mut comps = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, g) in voxels(dims).enumerate() {
            let ui = inner.at(i);
            let p = [g[0] as f64 + ui[0], g[1] as f64 + ui[1], g[2] as f64 + ui[2]];
            let uo = outer.sample(p);
            for a in 0..3 {
                comps[a][i] = ui[a] + uo[a];
            }
        }
        Ok(Self::from_parts(dims, comps))
    }

    /// Mean displacement length.
    pub fn mean_norm(&self) -> f64 {
        self.norms().sum::<f64>() / self.len() as f64
    }
}

/// Spatial transformer: `out(g) = vol(g + u(g))` with trilinear interpolation.
pub fn warp(vol: &Volume3, disp: &DisplacementField) -> Result<Volume3> {
    ensure_same_dims(vol.dims(), disp.dims())?;
    let out: Vec<f32> = voxels(disp.dims)
        .enumerate()
        .map(|(i, g)| {
            let u = disp.at(i);
            vol.sample_trilinear([g[0] as f64 + u[0], g[1] as f64 + u[1], g[2] as f64 + u[2]]) as f32
        })
        .collect();
    Ok(Volume3::new(disp.dims, out)?.with_spacing(vol.spacing()))
}

/// Warp that also returns the spatial gradient of `vol` at each sampled location,
/// as three component planes.
pub fn warp_with_gradient(vol: &Volume3, disp: &DisplacementField) -> Result<(Vec<f64>, [Vec<f64>; 3])> {
    ensure_same_dims(vol.dims(), disp.dims())?;
    let n = disp.len();
    let mut values = Vec::with_capacity(n);
    let mut grads = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for (i, g) in voxels(disp.dims).enumerate() {
        let u = disp.at(i);
        let (v, d) = vol.sample_with_gradient([g[0] as f64 + u[0], g[1] as f64 + u[1], g[2] as f64 + u[2]]);
        values.push(v);
        for a in 0..3 {
            grads[a].push(d[a]);
        }
    }
    Ok((values, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn translation(dims: Dims, t: [f64; 3]) -> DisplacementField {
        DisplacementField::from_fn(dims, |_| t).unwrap()
    }

    #[test]
    fn compose_identity_element() {
        let dims = [6, 5, 4];
        let phi = DisplacementField::from_fn(dims, |g| [0.1 * g[1] as f64, -0.2, (g[0] as f64 * 0.3).sin()]).unwrap();
        let zero = DisplacementField::zeros(dims).unwrap();
        assert_eq!(DisplacementField::compose(&zero, &phi).unwrap(), phi);
        assert_eq!(DisplacementField::compose(&phi, &zero).unwrap(), phi);
    }

    #[test]
    fn compose_translations_add() {
        let dims = [10, 6, 6];
        let c = DisplacementField::compose(&translation(dims, [1.0, 0.0, 0.0]), &translation(dims, [2.0, 0.0, 0.0])).unwrap();
        for x in 0..dims[0] - 3 {
            assert_eq!(c.at_voxel([x, 3, 3]), [3.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn compose_rejects_mismatch() {
        let a = DisplacementField::zeros([3, 3, 3]).unwrap();
        let b = DisplacementField::zeros([3, 3, 4]).unwrap();
        assert!(matches!(DisplacementField::compose(&a, &b), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn warp_zero_is_identity() {
        let v = Volume3::from_fn([5, 4, 3], |g| (g[0] * 3 + g[1] * 7 + g[2]) as f32 * 0.37).unwrap();
        let out = warp(&v, &DisplacementField::zeros([5, 4, 3]).unwrap()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn warp_integer_and_half_shift() {
        let v = Volume3::from_fn([6, 6, 6], |g| 2.0 * g[1] as f32).unwrap();
        let shifted = warp(&v, &translation([6, 6, 6], [0.0, 1.0, 0.0])).unwrap();
        for y in 0..5 {
            assert_eq!(shifted.get(2, y, 2), v.get(2, y + 1, 2));
        }
        let half = warp(&v, &translation([6, 6, 6], [0.0, 0.5, 0.0])).unwrap();
        for y in 0..5 {
            assert_relative_eq!(half.get(2, y, 2), v.get(2, y, 2) + 1.0);
        }
    }

    #[test]
    fn warp_gradient_matches_sampling() {
        let v = Volume3::from_fn([5, 5, 5], |g| (g[0] * g[1]) as f32 + g[2] as f32).unwrap();
        let d = translation([5, 5, 5], [0.25, 0.5, 0.5]);
        let (vals, grads) = warp_with_gradient(&v, &d).unwrap();
        let w = warp(&v, &d).unwrap();
        let i = linear_index([5, 5, 5], 1, 2, 2);
        assert_relative_eq!(vals[i] as f32, w.data()[i]);
        // d/dx (x*y + z) at y=2.5 -> 2.5
        assert_relative_eq!(grads[0][i], 2.5, epsilon = 1e-12);
        assert_relative_eq!(grads[2][i], 1.0, epsilon = 1e-12);
    }
}
