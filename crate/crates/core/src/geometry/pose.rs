//! Rigid-body (SE3) and similarity (Sim3) transforms.
//!
//! Every pose stored in the map is world-to-camera: `x_cam = R * x_world + t`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

/// A rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(quaternion_from_matrix(rotation), translation)
    }

    /// Builds a pose from scalar-last quaternion components.
    pub fn from_components(t: [f64; 3], q_xyzw: [f64; 4]) -> Self {
        let q = Quaternion::new(q_xyzw[3], q_xyzw[0], q_xyzw[1], q_xyzw[2]);
        Self::new(UnitQuaternion::from_quaternion(q), Vector3::from(t))
    }

    /// Pure translation.
    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let inv = self.rotation.inverse();
        PoseSE3 {
            rotation: renormalize(inv),
            translation: -(inv * self.translation),
        }
    }

    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera centre in world coordinates for a world-to-camera pose.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Rotation angle of this transform in radians.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Left-multiplicative update `exp(δ) ∘ self` with `δ = (ω, υ)`.
    ///
    /// The retraction rotates by `exp(ω)` and then translates by `υ`, so to
    /// first order the camera-frame point `p` moves by `ω × p + υ`.
    pub fn retract(&self, delta: &Vector6<f64>) -> PoseSE3 {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let upsilon = Vector3::new(delta[3], delta[4], delta[5]);
        let step = PoseSE3 {
            rotation: UnitQuaternion::from_scaled_axis(omega),
            translation: upsilon,
        };
        step.compose(self)
    }

    pub fn to_sim3(&self) -> PoseSim3 {
        PoseSim3 {
            rotation: self.rotation,
            translation: self.translation,
            scale: 1.0,
        }
    }

    /// Rotation angle and translation norm of `self⁻¹ ∘ other`.
    pub fn difference(&self, other: &PoseSE3) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.angle(), d.translation.norm())
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

/// A similarity transform `x ↦ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSim3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for PoseSim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSim3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// # Panics
    /// If `scale` is not strictly positive and finite.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "Sim3 scale must be positive, got {scale}");
        Self {
            rotation: renormalize(rotation),
            translation,
            scale,
        }
    }

    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * point) + self.translation
    }

    pub fn compose(&self, other: &PoseSim3) -> PoseSim3 {
        PoseSim3 {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> PoseSim3 {
        let inv = self.rotation.inverse();
        let s = 1.0 / self.scale;
        PoseSim3 {
            rotation: renormalize(inv),
            translation: -s * (inv * self.translation),
            scale: s,
        }
    }

    /// Rigid part with the scale divided out of the translation.
    ///
    /// For a world-to-camera similarity `x_c = s R x + t` this is the SE3
    /// pose observing the same image: `x_c / s = R x + t / s`.
    pub fn to_se3(&self) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation,
            translation: self.translation / self.scale,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

impl Mul for PoseSim3 {
    type Output = PoseSim3;
    fn mul(self, rhs: PoseSim3) -> PoseSim3 {
        self.compose(&rhs)
    }
}

/// Skew-symmetric cross-product matrix.
/// Closed-form quaternion of an orthonormal rotation matrix.
pub fn quaternion_from_matrix(rotation: &Matrix3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*rotation))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
