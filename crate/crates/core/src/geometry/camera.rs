use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use super::{GeometryError, Landmark3D, PoseSE3};

/// Points closer than this to the image plane are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Ideal pinhole intrinsics plus the image size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidCamera(format!("{self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point; `None` when `z ≤ MIN_DEPTH`.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Inverse of `project_camera_point` at a given depth.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let n = self.normalize(pixel);
        Vector3::new(n.x * depth, n.y * depth, depth)
    }

    /// Normalised image coordinates `K⁻¹ [u v 1]ᵀ` (first two entries).
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Unit bearing vector in the camera frame.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let n = self.normalize(pixel);
        Vector3::new(n.x, n.y, 1.0).normalize()
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }

    /// Mean focal length, used to convert normalised errors to pixels.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Jacobian of the pixel with respect to the camera-frame point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }
}

/// Projects a world point through a world-to-camera pose.
///
/// Returns `None` (the behind-camera marker) when the camera-frame depth is
/// not greater than [`MIN_DEPTH`].
pub fn project(camera: &PinholeCamera, pose: &PoseSE3, point: &Landmark3D) -> Option<Vector2<f64>> {
    camera.project_camera_point(&pose.transform(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let c = PinholeCamera { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 1, height: 1 };
        let px = project(&c, &PoseSE3::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn hand_evaluated_pinhole() {
        // u = 100 * 1 / 2 + 320
        let px = project(&cam(), &PoseSE3::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(370.0, 240.0));
    }

    #[test]
    fn zero_depth_is_behind_camera() {
        assert!(project(&cam(), &PoseSE3::identity(), &Vector3::new(1.0, 1.0, 0.0)).is_none());
        assert!(project(&cam(), &PoseSE3::identity(), &Vector3::new(1.0, 1.0, -3.0)).is_none());
        assert!(project(&cam(), &PoseSE3::identity(), &Vector3::new(0.0, 0.0, 1e-7)).is_none());
    }

    #[test]
    fn rejects_invalid_intrinsics() {
        assert!(PinholeCamera::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 1.0, 0.0, 4, 4).is_err());
    }

    proptest! {
        #[test]
        fn project_backproject_roundtrip(u in 0.0..640.0f64, v in 0.0..480.0f64, depth in 0.01..100.0f64) {
            let c = cam();
            let px = Vector2::new(u, v);
            let back = c.project_camera_point(&c.backproject(&px, depth)).unwrap();
            prop_assert!((back - px).norm() < 1e-9);
        }

        #[test]
        fn projection_jacobian_matches_differences(x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.5..5.0f64) {
            let c = cam();
            let p = Vector3::new(x, y, z);
            let j = c.projection_jacobian(&p);
            let h = 1e-6;
            for k in 0..3 {
                let mut a = p; a[k] += h;
                let mut b = p; b[k] -= h;
                let fd = (c.project_camera_point(&a).unwrap() - c.project_camera_point(&b).unwrap()) / (2.0 * h);
                prop_assert!((fd - j.column(k)).norm() < 1e-5 * (1.0 + fd.norm()));
            }
        }
    }

    #[test]
    fn world_to_camera_convention() {
        // Camera 2 m behind the origin along -z sees the origin on its optical axis.
        let pose = PoseSE3::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 2.0));
        assert!((pose.center() - Vector3::new(0.0, 0.0, -2.0)).norm() < 1e-12);
        let px = project(&cam(), &pose, &Vector3::zeros()).unwrap();
        assert!((px - Vector2::new(320.0, 240.0)).norm() < 1e-12);
    }
}
