use crate::error::Result;
use crate::transform::field::DisplacementField;
use crate::volume::Dims;

/// A 3x4 matrix `[A | t]` acting on homogeneous voxel coordinates: `p' = A p + t`.
///
/// Stored row-major, twelve scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub a: [f64; 12],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self::from_parts([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    pub fn from_parts(m: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut a = [0.0; 12];
        for r in 0..3 {
            a[4 * r..4 * r + 3].copy_from_slice(&m[r]);
            a[4 * r + 3] = t[r];
        }
        Self { a }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut p = Self::identity();
        p.a[3] = t[0];
        p.a[7] = t[1];
        p.a[11] = t[2];
        p
    }

    /// Rotation by `angle` radians about the z axis through `center`.
    pub fn rotation_z(angle: f64, center: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        let m = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        Self::about_center(m, center)
    }

    /// `p' = m (p - center) + center`.
    pub fn about_center(m: [[f64; 3]; 3], center: [f64; 3]) -> Self {
        let mut t = [0.0; 3];
        for r in 0..3 {
            t[r] = center[r] - (0..3).map(|k| m[r][k] * center[k]).sum::<f64>();
        }
        Self::from_parts(m, t)
    }

    pub fn linear(&self) -> [[f64; 3]; 3] {
        let a = &self.a;
        [[a[0], a[1], a[2]], [a[4], a[5], a[6]], [a[8], a[9], a[10]]]
    }

    pub fn offset(&self) -> [f64; 3] {
        [self.a[3], self.a[7], self.a[11]]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.a;
        [
            a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + a[3],
            a[4] * p[0] + a[5] * p[1] + a[6] * p[2] + a[7],
            a[8] * p[0] + a[9] * p[1] + a[10] * p[2] + a[11],
        ]
    }

    pub fn det(&self) -> f64 {
        det3(&self.linear())
    }

    /// Displacement of `center` under the map, i.e. the translation seen at that point.
    pub fn displacement_at(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.apply(p);
        [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
    }

    /// Rotation angle about z of the linear part, in radians.
    pub fn rotation_angle_z(&self) -> f64 {
        let m = self.linear();
        (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1])
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite())
    }

    /// Dense form `u(g) = A g + t - g`, used to compose with deformable fields.
    pub fn to_displacement(&self, dims: Dims) -> Result<DisplacementField> {
        DisplacementField::from_fn(dims, |g| {
            let p = [g[0] as f64, g[1] as f64, g[2] as f64];
            self.displacement_at(p)
        })
    }
}

pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
