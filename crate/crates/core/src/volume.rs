//! Dense scalar volumes on regular grids.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. All coordinates handled here are voxel
//! coordinates; `spacing` is carried along for persistence only.
//!
//! Sampling outside the grid clamps to the boundary face, for volumes and
//! vector fields alike.

use crate::error::{Error, Result};

/// Grid extent `(nx, ny, nz)`.
pub type Dims = [usize; 3];

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// Iterates voxel coordinates in storage order.
pub fn voxels(dims: Dims) -> impl Iterator<Item = [usize; 3]> {
    (0..dims[2]).flat_map(move |z| (0..dims[1]).flat_map(move |y| (0..dims[0]).map(move |x| [x, y, z])))
}

/// True when `g` is at least `margin` voxels away from every face.
#[inline]
pub fn is_interior(dims: Dims, g: [usize; 3], margin: usize) -> bool {
    (0..3).all(|a| g[a] >= margin && g[a] + margin < dims[a])
}

pub(crate) fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&n| n == 0) {
        return Err(Error::EmptyDims(dims));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(expected: Dims, found: Dims) -> Result<()> {
    if expected != found {
        return Err(Error::DimMismatch { expected, found });
    }
    Ok(())
}

#[inline]
fn axis_cell(p: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, false);
    }
    let hi = (n - 1) as f64;
    let inside = (0.0..=hi).contains(&p);
    let c = p.clamp(0.0, hi);
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, i0 + 1, c - i0 as f64, inside)
}

/// Corner indices and fractions of the trilinear cell containing `p`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    idx: [usize; 8],
    f: [f64; 3],
}

impl Cell {
    #[inline]
    pub(crate) fn new(dims: Dims, p: [f64; 3]) -> Self {
        let (x0, x1, fx, _) = axis_cell(p[0], dims[0]);
        let (y0, y1, fy, _) = axis_cell(p[1], dims[1]);
        let (z0, z1, fz, _) = axis_cell(p[2], dims[2]);
        let at = |x, y, z| linear_index(dims, x, y, z);
        Self {
            idx: [
                at(x0, y0, z0),
                at(x1, y0, z0),
                at(x0, y1, z0),
                at(x1, y1, z0),
                at(x0, y0, z1),
                at(x1, y0, z1),
                at(x0, y1, z1),
                at(x1, y1, z1),
            ],
            f: [fx, fy, fz],
        }
    }

    #[inline]
    pub(crate) fn eval<T: Copy + Into<f64>>(&self, data: &[T]) -> f64 {
        let v = |k: usize| -> f64 { data[self.idx[k]].into() };
        let [fx, fy, fz] = self.f;
        let c00 = v(0) * (1.0 - fx) + v(1) * fx;
        let c10 = v(2) * (1.0 - fx) + v(3) * fx;
        let c01 = v(4) * (1.0 - fx) + v(5) * fx;
        let c11 = v(6) * (1.0 - fx) + v(7) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }
}

/// Trilinear interpolation of `data` at the continuous voxel position `p`.
pub fn trilinear<T: Copy + Into<f64>>(data: &[T], dims: Dims, p: [f64; 3]) -> f64 {
    Cell::new(dims, p).eval(data)
}

/// Trilinear value together with the derivative of the interpolant with
/// respect to the sampling position. Clamped axes have zero derivative.
pub fn trilinear_with_gradient<T: Copy + Into<f64>>(data: &[T], dims: Dims, p: [f64; 3]) -> (f64, [f64; 3]) {
    let (x0, x1, fx, ix) = axis_cell(p[0], dims[0]);
    let (y0, y1, fy, iy) = axis_cell(p[1], dims[1]);
    let (z0, z1, fz, iz) = axis_cell(p[2], dims[2]);
    let at = |x, y, z| -> f64 { data[linear_index(dims, x, y, z)].into() };

    let v000 = at(x0, y0, z0);
    let v100 = at(x1, y0, z0);
    let v010 = at(x0, y1, z0);
    let v110 = at(x1, y1, z0);
    let v001 = at(x0, y0, z1);
    let v101 = at(x1, y0, z1);
    let v011 = at(x0, y1, z1);
    let v111 = at(x1, y1, z1);

    let c00 = v000 * (1.0 - fx) + v100 * fx;
    let c10 = v010 * (1.0 - fx) + v110 * fx;
    let c01 = v001 * (1.0 - fx) + v101 * fx;
    let c11 = v011 * (1.0 - fx) + v111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    let value = c0 * (1.0 - fz) + c1 * fz;

    let mut grad = [0.0; 3];
    if ix {
        let d00 = v100 - v000;
        let d10 = v110 - v010;
        let d01 = v101 - v001;
        let d11 = v111 - v011;
        let d0 = d00 * (1.0 - fy) + d10 * fy;
        let d1 = d01 * (1.0 - fy) + d11 * fy;
        grad[0] = d0 * (1.0 - fz) + d1 * fz;
    }
    if iy {
        grad[1] = (c10 - c00) * (1.0 - fz) + (c11 - c01) * fz;
    }
    if iz {
        grad[2] = c1 - c0;
    }
    (value, grad)
}

/// Discrete Gaussian truncated at `ceil(3 sigma)` taps each side, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

fn convolve_axis(src: &[f64], dims: Dims, axis: usize, kernel: &[f64], adjoint: bool) -> Vec<f64> {
    let r = kernel.len() / 2;
    let n = dims[axis];
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let stride_of = |ax: usize| [1, dims[0], dims[0] * dims[1]][ax];
    // Lines are padded by `r` replicated samples on each side.
    let mut pad = vec![0.0; n + 2 * r];
    let mut out = vec![0.0; src.len()];
    for j in 0..dims[b] {
        for i in 0..dims[a] {
            let base = i * stride_of(a) + j * stride_of(b);
            if adjoint {
                pad.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..n {
                    let s = src[base + k * stride];
                    for (t, &w) in kernel.iter().enumerate() {
                        pad[k + t] += w * s;
                    }
                }
                let head: f64 = pad[..=r].iter().sum();
                let tail: f64 = pad[n - 1 + r..].iter().sum();
                for k in 0..n {
                    out[base + k * stride] = pad[k + r];
                }
                out[base] = head;
                out[base + (n - 1) * stride] = if n == 1 { head + tail - pad[r] } else { tail };
            } else {
                let first = src[base];
                let last = src[base + (n - 1) * stride];
                pad[..r].iter_mut().for_each(|v| *v = first);
                pad[n + r..].iter_mut().for_each(|v| *v = last);
                for k in 0..n {
                    pad[k + r] = src[base + k * stride];
                }
                for k in 0..n {
                    out[base + k * stride] = kernel.iter().zip(&pad[k..]).map(|(w, v)| w * v).sum();
                }
            }
        }
    }
    out
}

/// Separable Gaussian smoothing with clamp-to-edge boundaries.
pub fn smooth_field(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let mut buf = data.to_vec();
    for axis in 0..3 {
        buf = convolve_axis(&buf, dims, axis, &kernel, false);
    }
    buf
}

/// Exact adjoint of [`smooth_field`]; used to pull gradients back through smoothing.
pub fn smooth_field_adjoint(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let mut buf = data.to_vec();
    for axis in (0..3).rev() {
        buf = convolve_axis(&buf, dims, axis, &kernel, true);
    }
    buf
}

/// A dense 3D scalar field on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        let expected = voxel_count(dims);
        if data.len() != expected {
            return Err(Error::DataLength {
                dims,
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing: [1.0; 3],
            data,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims, vec![value; voxel_count(dims)])
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 3]) -> f32) -> Result<Self> {
        check_dims(dims)?;
        let data = voxels(dims).map(&mut f).collect();
        Self::new(dims, data)
    }

    pub(crate) fn from_f64(dims: Dims, data: &[f64]) -> Self {
        debug_assert_eq!(data.len(), voxel_count(dims));
        Self {
            dims,
            spacing: [1.0; 3],
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        trilinear(&self.data, self.dims, p)
    }

    pub fn sample_with_gradient(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        trilinear_with_gradient(&self.data, self.dims, p)
    }

    /// Separable Gaussian smoothing; `sigma` is in voxels. `sigma == 0` returns an exact copy.
    pub fn gaussian_smooth(&self, sigma: f64) -> Volume3 {
        if sigma <= 0.0 {
            return self.clone();
        }
        let out = smooth_field(&self.to_f64(), self.dims, sigma);
        Volume3::from_f64(self.dims, &out).with_spacing(self.spacing)
    }

    /// Intensity windowing: clamp to `[lo, hi]` then map linearly onto `[0, 1]`.
    pub fn preprocess(&self, lo: f64, hi: f64) -> Result<Volume3> {
        if !(lo < hi) {
            return Err(Error::InvalidWindow { lo, hi });
        }
        let scale = hi - lo;
        let data = self
            .data
            .iter()
            .map(|&v| ((v as f64).clamp(lo, hi) - lo) / scale)
            .map(|v| v as f32)
            .collect();
        Ok(Volume3 {
            dims: self.dims,
            spacing: self.spacing,
            data,
        })
    }

    /// Soft-tissue CT window (-170 HU .. 230 HU).
    pub fn preprocess_ct(&self) -> Volume3 {
        self.preprocess(DEFAULT_WINDOW.0, DEFAULT_WINDOW.1)
            .expect("default window is valid")
    }

    /// Trilinear resampling that maps the old extent onto the new one
    /// (first and last nodes coincide along every axis).
    pub fn resample(&self, new_dims: Dims) -> Result<Volume3> {
        check_dims(new_dims)?;
        let ratio = |a: usize| {
            if new_dims[a] > 1 {
                (self.dims[a] - 1) as f64 / (new_dims[a] - 1) as f64
            } else {
                0.0
            }
        };
        let r = [ratio(0), ratio(1), ratio(2)];
        let spacing = [0, 1, 2].map(|a| {
            if new_dims[a] > 1 {
                self.spacing[a] * r[a]
            } else {
                self.spacing[a] * self.dims[a] as f64
            }
        });
        let out = Volume3::from_fn(new_dims, |g| {
            let p = [g[0] as f64 * r[0], g[1] as f64 * r[1], g[2] as f64 * r[2]];
            self.sample_trilinear(p) as f32
        })?;
        Ok(out.with_spacing(spacing))
    }

    /// Mask view: `true` where the value is at least 0.5.
    pub fn binarize(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v >= 0.5).collect()
    }
}

/// Hounsfield window used by [`Volume3::preprocess_ct`].
pub const DEFAULT_WINDOW: (f64, f64) = (-170.0, 230.0);

/// A set of named one-hot label channels sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    channels: Vec<Volume3>,
    names: Vec<String>,
}

impl LabelVolume {
    pub fn new(channels: Vec<Volume3>, names: Vec<String>) -> Result<Self> {
        let first = channels.first().ok_or(Error::ChannelMismatch { expected: 1, found: 0 })?;
        let dims = first.dims();
        for c in &channels {
            ensure_same_dims(dims, c.dims())?;
        }
        if names.len() != channels.len() {
            return Err(Error::ChannelMismatch {
                expected: channels.len(),
                found: names.len(),
            });
        }
        Ok(Self { dims, channels, names })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> &[Volume3] {
        &self.channels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&Volume3> {
        self.names.iter().position(|n| n == name).map(|i| &self.channels[i])
    }

    pub fn into_parts(self) -> (Vec<Volume3>, Vec<String>) {
        (self.channels, self.names)
    }

    /// Hard masks: each channel thresholded at 0.5.
    pub fn binarized(&self) -> LabelVolume {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let data = c.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
                Volume3::new(c.dims(), data).unwrap().with_spacing(c.spacing())
            })
            .collect();
        LabelVolume {
            dims: self.dims,
            channels,
            names: self.names.clone(),
        }
    }

    /// Restrict to the named channels, in the requested order.
    pub fn select(&self, names: &[String]) -> Result<LabelVolume> {
        let mut channels = Vec::with_capacity(names.len());
        for name in names {
            let c = self.channel(name).ok_or_else(|| Error::UnknownLabel {
                name: name.clone(),
                available: self.names.clone(),
            })?;
            channels.push(c.clone());
        }
        LabelVolume::new(channels, names.to_vec())
    }
}
