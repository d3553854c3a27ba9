use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Tolerance for accepting a matrix as a member of SO(3).
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A proper rotation matrix: `RᵀR = I` and `det R = 1` within [`ROTATION_TOLERANCE`].
///
/// Serialized as nine row-major floats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `m` against the SO(3) invariants.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::with_tolerance(m, ROTATION_TOLERANCE)
    }

    /// Validates `m` with a caller-provided tolerance. The matrix is stored as given.
    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let (orth, det) = orthonormality_defect(&m);
        if !(orth <= tol && (det - 1.0).abs() <= tol) {
            return Err(GeometryError::InvalidRotation { orthogonality: orth, determinant: det });
        }
        Ok(Self(m))
    }

    /// Accepts `m` if it is a rotation within `tol` and projects it back onto SO(3)
    /// with the SVD polar factor `U Vᵀ`.
    pub fn reorthonormalize(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let checked = Self::with_tolerance(m, tol)?;
        let svd = checked.0.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => {
                let (orth, det) = orthonormality_defect(&m);
                return Err(GeometryError::InvalidRotation { orthogonality: orth, determinant: det });
            }
        };
        Self::new(u * v_t)
    }

    pub fn from_row_major(values: [f64; 9]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&values))
    }

    #[rustfmt::skip]
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    /// Rotation by `angle` radians about `axis` (right-handed).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self, GeometryError> {
        let axis = Unit::try_new(axis, 1e-12).ok_or(GeometryError::ZeroAxis)?;
        Ok(Self(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix()))
    }

    /// Rotation about the z axis; in camera space this is a roll about the optical axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    /// Rotation angle in `[0, π]`.
    ///
    /// `2 cos θ = tr R − 1` and `2 sin θ = ‖vee(R − Rᵀ)‖`; combining both through
    /// `atan2` keeps full precision near 0 and π where `acos` of the trace alone
    /// loses about half the digits.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        let cos2 = (m.trace() - 1.0).clamp(-2.0, 2.0);
        skew.norm().atan2(cos2).clamp(0.0, std::f64::consts::PI)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Largest elementwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.0 - other.0).abs().max()
    }
}

impl TryFrom<[f64; 9]> for RotationMatrix {
    type Error = GeometryError;

    fn try_from(values: [f64; 9]) -> Result<Self, Self::Error> {
        Self::from_row_major(values)
    }
}

impl From<RotationMatrix> for [f64; 9] {
    fn from(r: RotationMatrix) -> Self {
        r.to_row_major()
    }
}

/// Returns `(‖MᵀM − I‖_∞, det M)` with the elementwise max norm.
pub fn orthonormality_defect(m: &Matrix3<f64>) -> (f64, f64) {
    let gram = m.transpose() * m - Matrix3::identity();
    let orth = gram.iter().fold(0.0_f64, |acc, v| if v.is_nan() { f64::NAN } else { acc.max(v.abs()) });
    (orth, m.determinant())
}
