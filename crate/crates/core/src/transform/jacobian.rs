use crate::transform::affine::det3;
use crate::transform::field::DisplacementField;
use crate::volume::{is_interior, linear_index, voxels, Dims, Volume3};

fn partial(c: &[f64], dims: Dims, g: [usize; 3], axis: usize) -> f64 {
    let n = dims[axis];
    if n == 1 {
        return 0.0;
    }
    let mut lo = g;
    let mut hi = g;
    let span = if g[axis] == 0 {
        hi[axis] += 1;
        1.0
    } else if g[axis] == n - 1 {
        lo[axis] -= 1;
        1.0
    } else {
        lo[axis] -= 1;
        hi[axis] += 1;
        2.0
    };
    (c[linear_index(dims, hi[0], hi[1], hi[2])] - c[linear_index(dims, lo[0], lo[1], lo[2])]) / span
}

/// Per-voxel `det(I + ∇u)`: central differences inside, one-sided on the faces.
pub fn jacobian_determinants(disp: &DisplacementField) -> Vec<f64> {
    let dims = disp.dims();
    voxels(dims)
        .map(|g| {
            let mut m = [[0.0; 3]; 3];
            for (r, row) in m.iter_mut().enumerate() {
                for (k, e) in row.iter_mut().enumerate() {
                    *e = partial(disp.component(r), dims, g, k) + if r == k { 1.0 } else { 0.0 };
                }
            }
            det3(&m)
        })
        .collect()
}

pub fn jacobian_det(disp: &DisplacementField) -> Volume3 {
    Volume3::from_f64(disp.dims(), &jacobian_determinants(disp))
}

/// Fraction of voxels at least `margin` voxels from the faces whose determinant is `<= 0`.
pub fn folding_fraction(disp: &DisplacementField, margin: usize) -> f64 {
    let dims = disp.dims();
    let dets = jacobian_determinants(disp);
    let (mut total, mut folded) = (0usize, 0usize);
    for (g, d) in voxels(dims).zip(&dets) {
        if is_interior(dims, g, margin) {
            total += 1;
            if *d <= 0.0 {
                folded += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        folded as f64 / total as f64
    }
}

/// Smallest determinant among voxels at least `margin` from the faces.
pub fn min_jacobian(disp: &DisplacementField, margin: usize) -> f64 {
    let dims = disp.dims();
    voxels(dims)
        .zip(jacobian_determinants(disp))
        .filter(|(g, _)| is_interior(dims, *g, margin))
        .map(|(_, d)| d)
        .fold(f64::INFINITY, f64::min)
}
