//! Small geometry helpers shared across the crate: rigid transforms and
//! rotation conversions. Rotations are stored as 3x3 matrices everywhere;
//! axis-angle and 6D forms are conversion utilities only.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// A rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Rodrigues formula: axis-angle vector (direction = axis, norm = angle in
/// radians) to rotation matrix. The zero vector maps to the identity.
pub fn axis_angle_to_matrix(aa: &Vector3<f64>) -> Matrix3<f64> {
    let angle = aa.norm();
    if angle < 1e-12 {
        return Matrix3::identity();
    }
    let axis = aa / angle;
    let k = skew(&axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Inverse of [`axis_angle_to_matrix`]. The result has angle in `[0, pi]`.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle < 1e-12 {
        return Vector3::zeros();
    }
    if (std::f64::consts::PI - angle).abs() < 1e-6 {
        // Near pi the off-diagonal construction is ill-conditioned; recover
        // the axis from the largest diagonal entry of R + I.
        let m = r + Matrix3::identity();
        let diag = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let i = if diag[0] >= diag[1] && diag[0] >= diag[2] {
            0
        } else if diag[1] >= diag[2] {
            1
        } else {
            2
        };
        let col = m.column(i);
        let axis = Vector3::new(col[0], col[1], col[2]).normalize();
        return axis * angle;
    }
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) / (2.0 * angle.sin());
    axis * angle
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Maximum deviation of `R` from a proper rotation: the larger of
/// `max |R^T R - I|` and `|det R - 1|`.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

/// Validate a rotation matrix against the pose invariants
/// (`R^T R = I` and `det R = +1`, both within `tol`).
pub fn check_rotation(r: &Matrix3<f64>, tol: f64, what: &str) -> Result<()> {
    let defect = rotation_defect(r);
    if !defect.is_finite() || defect > tol {
        return Err(Error::InvariantViolation {
            field: what.to_string(),
            detail: format!("not a proper rotation (defect {defect:.3e}, tolerance {tol:.0e})"),
        });
    }
    Ok(())
}
