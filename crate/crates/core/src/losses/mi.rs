//! Mutual information from a Gaussian Parzen-window joint histogram.
//!
//! Bin centers sit at `k / (bins - 1)` for `k = 0..bins`, spanning `[0, 1]`.
//! Each intensity spreads over the bins within six kernel widths of it; the
//! weights are normalized per voxel so the joint histogram is a proper
//! distribution and the estimate is differentiable in every intensity.

use crate::error::Result;
use crate::volume::{ensure_same_dims, Volume3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiConfig {
    pub bins: usize,
    /// Kernel standard deviation in intensity units.
    pub parzen_sigma: f64,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self::with_bins(32)
    }
}

impl MiConfig {
    /// `bins` centers with sigma at half the bin width.
    pub fn with_bins(bins: usize) -> Self {
        let width = 1.0 / (bins.max(2) - 1) as f64;
        Self {
            bins,
            parzen_sigma: 0.5 * width,
        }
    }

    pub fn bin_width(&self) -> f64 {
        1.0 / (self.bins - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 || !(self.parzen_sigma > 0.0) {
            return Err(crate::Error::Config(format!(
                "MI needs bins >= 2 and parzen_sigma > 0 (got {} and {})",
                self.bins, self.parzen_sigma
            )));
        }
        Ok(())
    }
}

/// Precomputed window geometry for one configuration.
#[derive(Debug, Clone)]
struct Window {
    bins: usize,
    width: f64,
    /// sigma in bin units
    s: f64,
    radius: usize,
}

impl Window {
    fn new(cfg: &MiConfig) -> Self {
        let width = cfg.bin_width();
        let s = cfg.parzen_sigma / width;
        Self {
            bins: cfg.bins,
            width,
            s,
            radius: (6.0 * s).ceil().max(1.0) as usize,
        }
    }

    fn taps(&self) -> usize {
        2 * self.radius + 1
    }

    /// Fills `w` (and optionally `dw`, derivative w.r.t. the intensity) and returns the first bin.
    fn weights(&self, x: f64, w: &mut [f64], dw: Option<&mut [f64]>) -> (usize, usize) {
        let t = x / self.width;
        let center = t.round().clamp(0.0, (self.bins - 1) as f64) as usize;
        let start = center.saturating_sub(self.radius);
        let end = (center + self.radius).min(self.bins - 1);
        let count = end - start + 1;
        let inv2s2 = 1.0 / (2.0 * self.s * self.s);

        let mut sum = 0.0;
        for j in 0..count {
            let d = t - (start + j) as f64;
            w[j] = (-d * d * inv2s2).exp();
            sum += w[j];
        }
        for wj in w.iter_mut().take(count) {
            *wj /= sum;
        }
        if let Some(dw) = dw {
            // d/dt log k_j = -(t - j) / s^2
            let inv_s2 = 1.0 / (self.s * self.s);
            let mut mean_d = 0.0;
            for j in 0..count {
                let dj = -(t - (start + j) as f64) * inv_s2;
                dw[j] = dj;
                mean_d += w[j] * dj;
            }
            for j in 0..count {
                dw[j] = w[j] * (dw[j] - mean_d) / self.width;
            }
        }
        (start, count)
    }
}

/// Parzen MI against a fixed reference image, reusable across many moving images.
#[derive(Debug, Clone)]
pub struct ParzenMi {
    window: Window,
    n: usize,
    fixed_start: Vec<u32>,
    fixed_count: Vec<u16>,
    fixed_w: Vec<f64>,
}

/// Joint and marginal distributions of one evaluation.
struct Joint {
    p: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
}

impl ParzenMi {
    pub fn new<T: Copy + Into<f64>>(fixed: &[T], cfg: &MiConfig) -> Self {
        let window = Window::new(cfg);
        let taps = window.taps();
        let n = fixed.len();
        let mut fixed_start = Vec::with_capacity(n);
        let mut fixed_count = Vec::with_capacity(n);
        let mut fixed_w = vec![0.0; n * taps];
        for (i, &y) in fixed.iter().enumerate() {
            let (s, c) = window.weights(y.into(), &mut fixed_w[i * taps..(i + 1) * taps], None);
            fixed_start.push(s as u32);
            fixed_count.push(c as u16);
        }
        Self {
            window,
            n,
            fixed_start,
            fixed_count,
            fixed_w,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn joint<T: Copy + Into<f64>>(&self, moving: &[T]) -> Joint {
        assert_eq!(moving.len(), self.n, "moving image size differs from the reference");
        let bins = self.window.bins;
        let taps = self.window.taps();
        let mut p = vec![0.0; bins * bins];
        let mut wx = vec![0.0; taps];
        for (i, &x) in moving.iter().enumerate() {
            let (sx, cx) = self.window.weights(x.into(), &mut wx, None);
            let sy = self.fixed_start[i] as usize;
            let cy = self.fixed_count[i] as usize;
            let wy = &self.fixed_w[i * taps..i * taps + cy];
            for a in 0..cx {
                let row = &mut p[(sx + a) * bins + sy..(sx + a) * bins + sy + cy];
                let wa = wx[a];
                for (r, &wb) in row.iter_mut().zip(wy) {
                    *r += wa * wb;
                }
            }
        }
        let inv = 1.0 / self.n as f64;
        p.iter_mut().for_each(|v| *v *= inv);
        let mut px = vec![0.0; bins];
        let mut py = vec![0.0; bins];
        for a in 0..bins {
            for b in 0..bins {
                px[a] += p[a * bins + b];
                py[b] += p[a * bins + b];
            }
        }
        Joint { p, px, py }
    }

    fn mi_from(&self, j: &Joint) -> f64 {
        let bins = self.window.bins;
        let mut mi = 0.0;
        for a in 0..bins {
            for b in 0..bins {
                let pab = j.p[a * bins + b];
                if pab > 0.0 {
                    mi += pab * (pab / (j.px[a] * j.py[b])).ln();
                }
            }
        }
        mi
    }

    /// MI in nats between `moving` and the reference.
    pub fn mi<T: Copy + Into<f64>>(&self, moving: &[T]) -> f64 {
        self.mi_from(&self.joint(moving))
    }

    /// MI and its derivative with respect to every moving intensity.
    pub fn mi_with_gradient<T: Copy + Into<f64>>(&self, moving: &[T]) -> (f64, Vec<f64>) {
        let joint = self.joint(moving);
        let mi = self.mi_from(&joint);
        let bins = self.window.bins;
        let taps = self.window.taps();

        // dMI/dp_ab up to an additive constant that cancels (weights sum to one)
        let mut g = vec![0.0; bins * bins];
        for a in 0..bins {
            for b in 0..bins {
                let pab = joint.p[a * bins + b];
                if pab > 0.0 {
                    g[a * bins + b] = pab.ln() - joint.px[a].ln() - joint.py[b].ln();
                }
            }
        }

        let inv = 1.0 / self.n as f64;
        let mut grad = vec![0.0; self.n];
        let mut wx = vec![0.0; taps];
        let mut dwx = vec![0.0; taps];
        for (i, &x) in moving.iter().enumerate() {
            let (sx, cx) = self.window.weights(x.into(), &mut wx, Some(&mut dwx));
            let sy = self.fixed_start[i] as usize;
            let cy = self.fixed_count[i] as usize;
            let wy = &self.fixed_w[i * taps..i * taps + cy];
            let mut acc = 0.0;
            for a in 0..cx {
                let row = &g[(sx + a) * bins + sy..(sx + a) * bins + sy + cy];
                let h: f64 = row.iter().zip(wy).map(|(gab, wb)| gab * wb).sum();
                acc += dwx[a] * h;
            }
            grad[i] = acc * inv;
        }
        (mi, grad)
    }
}

/// MI between two volumes on the same grid.
pub fn mutual_information(x: &Volume3, y: &Volume3, cfg: &MiConfig) -> Result<f64> {
    ensure_same_dims(y.dims(), x.dims())?;
    cfg.validate()?;
    Ok(ParzenMi::new(y.data(), cfg).mi(x.data()))
}

/// MI of a volume with itself, the upper bound any alignment can reach.
pub fn self_information(v: &Volume3, cfg: &MiConfig) -> f64 {
    ParzenMi::new(v.data(), cfg).mi(v.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume3::from_fn(dims, |_| rng.random::<f32>()).unwrap()
    }

    #[test]
    fn binary_self_mi_is_ln2() {
        let v = Volume3::from_fn([8, 8, 8], |g| if g[0] < 4 { 0.0 } else { 1.0 }).unwrap();
        let mi = mutual_information(&v, &v, &MiConfig::default()).unwrap();
        assert!((mi - 2f64.ln()).abs() < 0.02, "{mi}");
    }

    #[test]
    fn constant_image_has_zero_mi() {
        let c = Volume3::filled([6, 6, 6], 0.3).unwrap();
        let r = random_volume([6, 6, 6], 1);
        assert!(mutual_information(&c, &r, &MiConfig::default()).unwrap().abs() < 1e-12);
        assert!(mutual_information(&r, &c, &MiConfig::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = random_volume([7, 6, 5], 2);
        let b = Volume3::from_fn([7, 6, 5], |g| ((g[0] + g[2]) as f32 / 10.0).min(1.0)).unwrap();
        let cfg = MiConfig::default();
        let ab = mutual_information(&a, &b, &cfg).unwrap();
        let ba = mutual_information(&b, &a, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab >= -1e-9);
    }

    #[test]
    fn rejects_grid_mismatch() {
        let a = Volume3::zeros([2, 2, 2]).unwrap();
        let b = Volume3::zeros([2, 2, 3]).unwrap();
        assert!(mutual_information(&a, &b, &MiConfig::default()).is_err());
    }

    #[test]
    fn weights_are_normalized_at_edges() {
        let w = Window::new(&MiConfig::default());
        let mut buf = vec![0.0; w.taps()];
        for x in [0.0, 0.004, 0.5, 0.999, 1.0] {
            let (_, c) = w.weights(x, &mut buf, None);
            assert_relative_eq!(buf[..c].iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let dims = [8, 8, 8];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..512).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| (0.6 * v + 0.4 * rng.random::<f64>()).clamp(0.0, 1.0)).collect();
        let _ = dims;
        let mi = ParzenMi::new(&y, &MiConfig::default());
        let (_, grad) = mi.mi_with_gradient(&x);
        let h = 1e-6;
        for i in [0usize, 17, 100, 255, 511] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (mi.mi(&xp) - mi.mi(&xm)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "voxel {i}: analytic {} fd {fd} rel {rel}", grad[i]);
        }
    }
}
