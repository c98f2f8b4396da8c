use super::{GeomError, Mat3, Vec3};

/// Rigid motion `p -> R p + t` with `R` a proper rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validates `R^T R = I` and `det R = +1` within 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeomError> {
        let drift = (rotation.transpose() * rotation - Mat3::identity()).norm();
        let det = rotation.determinant();
        if drift > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeomError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Rotation by `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        )
        .into_inner();
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_points(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// Normals transform by the rotation alone.
    pub fn apply_normal(&self, n: &Vec3) -> Vec3 {
        self.rotation * n
    }

    /// Composition `a.compose(b)` applies `b` first: `(a ∘ b)(p) = a(b(p))`.
    pub fn compose(&self, b: &Self) -> Self {
        Self {
            rotation: self.rotation * b.rotation,
            translation: self.rotation * b.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians (distance of `R` from the identity).
    pub fn rotation_angle(&self) -> f64 {
        let trace = self.rotation.trace();
        ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}
