use crate::error::{Error, Result};
use crate::transform::DisplacementField;
use crate::volume::{linear_index, voxels};

/// Sum of squared forward differences of the displacement over every in-grid pair.
pub fn smoothness_loss(disp: &DisplacementField) -> f64 {
    let dims = disp.dims();
    let mut total = 0.0;
    for c in disp.components() {
        for (i, g) in voxels(dims).enumerate() {
            for a in 0..3 {
                if g[a] + 1 < dims[a] {
                    let mut h = g;
                    h[a] += 1;
                    let d = c[linear_index(dims, h[0], h[1], h[2])] - c[i];
                    total += d * d;
                }
            }
        }
    }
    total
}

pub fn smoothness_gradient(disp: &DisplacementField) -> [Vec<f64>; 3] {
    let dims = disp.dims();
    std::array::from_fn(|axis| {
        let c = disp.component(axis);
        let mut grad = vec![0.0; c.len()];
        for (i, g) in voxels(dims).enumerate() {
            for a in 0..3 {
                if g[a] + 1 < dims[a] {
                    let mut h = g;
                    h[a] += 1;
                    let j = linear_index(dims, h[0], h[1], h[2]);
                    let d = 2.0 * (c[j] - c[i]);
                    grad[j] += d;
                    grad[i] -= d;
                }
            }
        }
        grad
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance of the pooled samples (first 512 of each set).
pub fn median_bandwidth<S: AsRef<[f64]>>(q: &[S], p: &[S]) -> f64 {
    let pooled: Vec<&[f64]> = q.iter().take(512).chain(p.iter().take(512)).map(|s| s.as_ref()).collect();
    let mut d: Vec<f64> = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn check_sets<S: AsRef<[f64]>>(q: &[S], p: &[S]) -> Result<usize> {
    if q.is_empty() || p.is_empty() {
        return Err(Error::EmptySamples);
    }
    let dim = q[0].as_ref().len();
    if q.iter().chain(p).any(|s| s.as_ref().len() != dim) {
        return Err(Error::Config("MMD samples must share one dimension".into()));
    }
    Ok(dim)
}

/// Mean kernel value within one set; self-pairs are excluded unless the set has a single sample.
fn within<S: AsRef<[f64]>>(s: &[S], k: &impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let n = s.len();
    if n == 1 {
        return k(s[0].as_ref(), s[0].as_ref());
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += k(s[i].as_ref(), s[j].as_ref());
            }
        }
    }
    acc / (n * (n - 1)) as f64
}

/// Maximum mean discrepancy with a Gaussian kernel `exp(-|a-b|^2 / (2 h^2))`.
///
/// `bandwidth = None` selects `h` by the median heuristic.
pub fn mmd_loss<S: AsRef<[f64]>>(q: &[S], p: &[S], bandwidth: Option<f64>) -> Result<f64> {
    check_sets(q, p)?;
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(q, p));
    let inv = 1.0 / (2.0 * h * h);
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) * inv).exp();
    let mut cross = 0.0;
    for a in q {
        for b in p {
            cross += k(a.as_ref(), b.as_ref());
        }
    }
    cross /= (q.len() * p.len()) as f64;
    Ok(within(q, &k) + within(p, &k) - 2.0 * cross)
}

/// MMD and its gradient with respect to every sample of `q`.
pub fn mmd_with_gradient<S: AsRef<[f64]>>(q: &[S], p: &[S], bandwidth: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = check_sets(q, p)?;
    let value = mmd_loss(q, p, Some(bandwidth))?;
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let inv = 0.5 * inv_h2;
    let n = q.len();
    let m = p.len();
    let mut grad = vec![vec![0.0; dim]; n];
    // d k(a, b) / da = -k (a - b) / h^2
    if n > 1 {
        let scale = 2.0 / (n * (n - 1)) as f64;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (q[i].as_ref(), q[j].as_ref());
                let kv = (-sq_dist(a, b) * inv).exp();
                for d in 0..dim {
                    grad[i][d] -= scale * kv * (a[d] - b[d]) * inv_h2;
                }
            }
        }
    }
    let scale = 2.0 / (n * m) as f64;
    for i in 0..n {
        for b in p {
            let (a, b) = (q[i].as_ref(), b.as_ref());
            let kv = (-sq_dist(a, b) * inv).exp();
            for d in 0..dim {
                grad[i][d] += scale * kv * (a[d] - b[d]) * inv_h2;
            }
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn smoothness_cases() {
        let dims = [5, 4, 3];
        let c = DisplacementField::from_fn(dims, |_| [1.0, -2.0, 0.5]).unwrap();
        assert_eq!(smoothness_loss(&c), 0.0);
        let ramp = DisplacementField::from_fn(dims, |g| [g[0] as f64, 0.0, 0.0]).unwrap();
        assert_eq!(smoothness_loss(&ramp), ((dims[0] - 1) * dims[1] * dims[2]) as f64);
    }

    #[test]
    fn smoothness_gradient_matches_fd() {
        let dims = [3, 3, 2];
        let u = DisplacementField::from_fn(dims, |g| [(g[0] * g[1]) as f64 * 0.3, (g[2] as f64).sin(), g[1] as f64]).unwrap();
        let grad = smoothness_gradient(&u);
        let h = 1e-6;
        for axis in 0..3 {
            for i in 0..u.len() {
                let bump = |s: f64| {
                    let mut comps = u.components().clone();
                    comps[axis][i] += s;
                    smoothness_loss(&DisplacementField::from_components(dims, comps).unwrap())
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert_relative_eq!(grad[axis][i], fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn mmd_single_pair() {
        let z = [vec![0.3, -1.0]];
        let w = [vec![1.1, 0.5]];
        let k = (-(0.8f64.powi(2) + 1.5f64.powi(2)) / 2.0).exp();
        assert_relative_eq!(mmd_loss(&z, &w, Some(1.0)).unwrap(), 2.0 - 2.0 * k, epsilon = 1e-12);
    }

    #[test]
    fn mmd_identical_sets_not_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<Vec<f64>> = (0..200).map(|_| vec![normal.sample(&mut rng)]).collect();
        assert!(mmd_loss(&s, &s, None).unwrap() <= 0.0);
    }

    #[test]
    fn mmd_separated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q_dist = Normal::new(10.0, 1.0).unwrap();
        let p_dist = Normal::new(0.0, 1.0).unwrap();
        let q: Vec<Vec<f64>> = (0..1000).map(|_| vec![q_dist.sample(&mut rng)]).collect();
        let p: Vec<Vec<f64>> = (0..1000).map(|_| vec![p_dist.sample(&mut rng)]).collect();
        assert!(mmd_loss(&q, &p, Some(1.0)).unwrap() > 0.5);
    }

    #[test]
    fn mmd_rejects_empty() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(mmd_loss(&empty, &[vec![1.0]], None), Err(Error::EmptySamples)));
    }

    #[test]
    fn mmd_gradient_matches_fd() {
        let q = vec![vec![0.1, 0.4], vec![-0.3, 0.9], vec![1.2, -0.2]];
        let p = vec![vec![0.0, 0.0], vec![0.5, -0.5]];
        let (_, g) = mmd_with_gradient(&q, &p, 0.8).unwrap();
        let h = 1e-6;
        for i in 0..q.len() {
            for d in 0..2 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i][d] += h;
                qm[i][d] -= h;
                let fd = (mmd_loss(&qp, &p, Some(0.8)).unwrap() - mmd_loss(&qm, &p, Some(0.8)).unwrap()) / (2.0 * h);
                assert_relative_eq!(g[i][d], fd, epsilon = 1e-6);
            }
        }
    }
}
