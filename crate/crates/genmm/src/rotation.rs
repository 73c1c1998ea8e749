//! Continuous 6D rotation encoding.
//!
//! A rotation is stored as the first two columns of its 3x3 matrix,
//! flattened column-major: `(m00, m10, m20, m01, m11, m21)`.  The
//! encoding is continuous in SO(3), which keeps linear blends of
//! nearby rotations meaningful; decoding re-orthonormalizes with
//! Gram-Schmidt, so blended values always map back to a valid
//! rotation.

use crate::error::{Error, Result};
use crate::math::{self, Quat, Vec3};

/// Number of feature columns a single rotation occupies.
pub const ROTATION_DIM: usize = 6;

/// Tolerance for the unit-norm check on encode.
pub const UNIT_NORM_EPS: f64 = 1e-6;

/// Vectors shorter than this cannot be safely normalized on decode.
const DEGENERATE_EPS: f64 = 1e-8;

/// Two matrix columns, flattened.  Not necessarily orthonormal once
/// values have been blended; `to_quat` projects back onto SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation6D(pub [f64; ROTATION_DIM]);

impl Rotation6D {
    /// Encodes a unit quaternion.  Rejects quaternions whose norm is
    /// further than `UNIT_NORM_EPS` from one, since a non-unit input
    /// would silently skew the matrix columns.
    pub fn from_quat(q: Quat) -> Result<Rotation6D> {
        let n = q.norm();
        if (n - 1.0).abs() > UNIT_NORM_EPS {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {n} is not within {UNIT_NORM_EPS} of 1"
            )));
        }
        let m = q.to_matrix();
        Ok(Rotation6D([
            m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1],
        ]))
    }

    /// Decodes via Gram-Schmidt: normalize the first column, remove
    /// its component from the second, and complete with a cross
    /// product.  Fails when either column collapses to (near) zero
    /// length or the two columns are (near) parallel.
    pub fn to_quat(&self) -> Result<Quat> {
        let v = &self.0;
        let a: Vec3 = [v[0], v[1], v[2]];
        let b: Vec3 = [v[3], v[4], v[5]];

        let na = math::norm(a);
        if na <= DEGENERATE_EPS {
            return Err(Error::DegenerateRotation(format!(
                "first column has near-zero norm {na}"
            )));
        }
        let a = math::scale(a, 1.0 / na);

        let b_orth = math::sub(b, math::scale(a, math::dot(a, b)));
        let nb = math::norm(b_orth);
        if nb <= DEGENERATE_EPS {
            return Err(Error::DegenerateRotation(format!(
                "columns are near-parallel (residual norm {nb})"
            )));
        }
        let b = math::scale(b_orth, 1.0 / nb);

        let c = math::cross(a, b);
        let m = [
            [a[0], b[0], c[0]],
            [a[1], b[1], c[1]],
            [a[2], b[2], c[2]],
        ];
        Ok(Quat::from_matrix(&m).canonicalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Axis;

    #[test]
    fn identity_encodes_to_unit_columns() {
        let r = Rotation6D::from_quat(Quat::IDENTITY).unwrap();
        assert_eq!(r.0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn round_trip_is_tight() {
        let q = (Quat::from_axis_angle_deg(Axis::Y, 77.0)
            * Quat::from_axis_angle_deg(Axis::X, -33.0))
        .canonicalized();
        let back = Rotation6D::from_quat(q).unwrap().to_quat().unwrap();
        assert!(q.geodesic_angle(back) < 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let q = Quat::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(
            Rotation6D::from_quat(q),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn decode_renormalizes_scaled_columns() {
        // A uniform scale on both columns must decode to the same
        // rotation; this is what makes averaged encodings usable.
        let q = Quat::from_axis_angle_deg(Axis::Z, 40.0);
        let r = Rotation6D::from_quat(q).unwrap();
        let scaled = Rotation6D(r.0.map(|v| v * 0.37));
        let back = scaled.to_quat().unwrap();
        assert!(q.geodesic_angle(back) < 1e-12);
    }

    #[test]
    fn zero_columns_are_degenerate() {
        let r = Rotation6D([0.0; 6]);
        assert!(matches!(r.to_quat(), Err(Error::DegenerateRotation(_))));
    }

    #[test]
    fn parallel_columns_are_degenerate() {
        let r = Rotation6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(r.to_quat(), Err(Error::DegenerateRotation(_))));
    }
}
