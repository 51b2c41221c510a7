use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use super::{GeometryError, Landmark3D, PinholeCamera, PoseSE3, MIN_DEPTH};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangulationParams {
    pub min_parallax_deg: f64,
    /// Maximum reprojection error in either view, pixels.
    pub max_reprojection_px: f64,
}

impl Default for TriangulationParams {
    fn default() -> Self {
        Self {
            min_parallax_deg: 1.0,
            // sqrt(5.991), the 2-DoF 95% gate at unit pixel sigma
            max_reprojection_px: 5.991f64.sqrt(),
        }
    }
}

/// Angle in radians between the viewing rays of two pixels.
pub fn parallax_angle(
    cam_a: &PinholeCamera,
    pose_a: &PoseSE3,
    pix_a: &Vector2<f64>,
    cam_b: &PinholeCamera,
    pose_b: &PoseSE3,
    pix_b: &Vector2<f64>,
) -> f64 {
    let ray_a = pose_a.rotation.inverse() * cam_a.bearing(pix_a);
    let ray_b = pose_b.rotation.inverse() * cam_b.bearing(pix_b);
    ray_a.dot(&ray_b).clamp(-1.0, 1.0).acos()
}

/// Two-view triangulation: linear DLT followed by one Gauss-Newton step on
/// the reprojection error.
pub fn triangulate(
    cam_a: &PinholeCamera,
    pose_a: &PoseSE3,
    cam_b: &PinholeCamera,
    pose_b: &PoseSE3,
    pix_a: &Vector2<f64>,
    pix_b: &Vector2<f64>,
    params: &TriangulationParams,
) -> Result<Landmark3D, GeometryError> {
    let baseline = (pose_a.center() - pose_b.center()).norm();
    let angle = parallax_angle(cam_a, pose_a, pix_a, cam_b, pose_b, pix_b);
    let min_rad = params.min_parallax_deg.to_radians();
    if angle < min_rad || baseline < 1e-12 {
        return Err(GeometryError::LowParallax {
            angle_deg: angle.to_degrees(),
            min_deg: params.min_parallax_deg,
        });
    }

    let na = cam_a.normalize(pix_a);
    let nb = cam_b.normalize(pix_b);
    let pa = pose_a.to_matrix();
    let pb = pose_b.to_matrix();
    let mut a = Matrix4::zeros();
    for (row, (n, p)) in [(na, pa), (nb, pb)].iter().enumerate() {
        let r0 = p.row(0);
        let r1 = p.row(1);
        let r2 = p.row(2);
        a.set_row(2 * row, &(r2 * n.x - r0));
        a.set_row(2 * row + 1, &(r2 * n.y - r1));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("DLT SVD failed"))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("four singular values");
    let h = v_t.row(min_idx);
    if h[3].abs() < 1e-15 {
        return Err(GeometryError::Degenerate("point at infinity"));
    }
    let mut x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let views = [(cam_a, pose_a, pix_a), (cam_b, pose_b, pix_b)];
    if views.iter().any(|(_, pose, _)| pose.transform(&x).z <= MIN_DEPTH) {
        return Err(GeometryError::NegativeDepth);
    }

    // One Gauss-Newton step on the pixel residuals.
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (cam, pose, pix) in views {
        let pc = pose.transform(&x);
        let r = cam.project_camera_point(&pc).expect("depth checked") - pix;
        let j = cam.projection_jacobian(&pc) * pose.rotation_matrix();
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    if let Some(chol) = jtj.cholesky() {
        let refined = x - chol.solve(&jtr);
        if views.iter().all(|(_, pose, _)| pose.transform(&refined).z > MIN_DEPTH) {
            x = refined;
        }
    }

    let mut worst: f64 = 0.0;
    for (cam, pose, pix) in views {
        let pc = pose.transform(&x);
        if pc.z <= MIN_DEPTH {
            return Err(GeometryError::NegativeDepth);
        }
        let e = (cam.project_camera_point(&pc).expect("depth checked") - pix).norm();
        worst = worst.max(e);
    }
    if worst > params.max_reprojection_px {
        return Err(GeometryError::ReprojectionError {
            error_px: worst,
            max_px: params.max_reprojection_px,
        });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap()
    }

    fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> PoseSE3 {
        let z = (target - center).normalize();
        let up = Vector3::new(0.0, -1.0, 0.0);
        let x = up.cross(&z).normalize();
        let y = z.cross(&x);
        let r_wc = Matrix3::from_columns(&[x, y, z]);
        let r_cw = r_wc.transpose();
        PoseSE3::from_rotation_matrix(&r_cw, -(r_cw * center))
    }

    #[test]
    fn recovers_point_from_exact_pixels() {
        let c = cam();
        let pa = look_at(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 5.0));
        let pb = look_at(Vector3::new(0.5, 0.1, 0.0), Vector3::new(0.0, 0.0, 5.0));
        let x = Vector3::new(0.3, -0.2, 4.0);
        let ua = project(&c, &pa, &x).unwrap();
        let ub = project(&c, &pb, &x).unwrap();
        let got = triangulate(&c, &pa, &c, &pb, &ua, &ub, &TriangulationParams::default()).unwrap();
        assert!((got - x).norm() < 1e-6);
    }

    #[test]
    fn identical_poses_fail_with_low_parallax() {
        let c = cam();
        let p = PoseSE3::identity();
        let x = Vector3::new(0.3, -0.2, 4.0);
        let u = project(&c, &p, &x).unwrap();
        let err = triangulate(&c, &p, &c, &p, &u, &u, &TriangulationParams::default()).unwrap_err();
        assert!(matches!(err, GeometryError::LowParallax { .. }));
    }

    #[test]
    fn point_behind_second_camera_fails() {
        let c = cam();
        let pa = PoseSE3::identity();
        // Camera B sits at z = 8 looking back towards the origin.
        let pb = look_at(Vector3::new(0.2, 0.0, 8.0), Vector3::new(0.2, 0.0, 20.0));
        let x = Vector3::new(0.3, -0.2, 4.0);
        let ua = project(&c, &pa, &x).unwrap();
        // Mirror the point through camera B's centre so that its projection is defined.
        let mirrored = 2.0 * pb.center() - x;
        let ub = project(&c, &pb, &mirrored).unwrap();
        let err = triangulate(&c, &pa, &c, &pb, &ua, &ub, &TriangulationParams::default()).unwrap_err();
        assert_eq!(err, GeometryError::NegativeDepth);
    }

    #[test]
    fn noisy_pixels_beyond_gate_are_rejected() {
        let c = cam();
        let pa = PoseSE3::identity();
        let pb = PoseSE3::new(UnitQuaternion::identity(), Vector3::new(-0.5, 0.0, 0.0));
        let x = Vector3::new(0.3, -0.2, 4.0);
        let ua = project(&c, &pa, &x).unwrap();
        let ub = project(&c, &pb, &x).unwrap() + Vector2::new(0.0, 30.0);
        let err = triangulate(&c, &pa, &c, &pb, &ua, &ub, &TriangulationParams::default()).unwrap_err();
        assert!(matches!(err, GeometryError::ReprojectionError { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn triangulate_inverts_projection(
            px in -1.0..1.0f64, py in -1.0..1.0f64, pz in 2.0..8.0f64,
            bx in -1.0..1.0f64, by in -0.5..0.5f64, yaw in -0.2..0.2f64,
        ) {
            let c = cam();
            let pa = PoseSE3::identity();
            let pb = PoseSE3::new(UnitQuaternion::from_euler_angles(0.0, yaw, 0.0), Vector3::new(bx, by, 0.0));
            let x = Vector3::new(px, py, pz);
            let (Some(ua), Some(ub)) = (project(&c, &pa, &x), project(&c, &pb, &x)) else { return Ok(()); };
            let params = TriangulationParams::default();
            if parallax_angle(&c, &pa, &ua, &c, &pb, &ub) < params.min_parallax_deg.to_radians() {
                return Ok(());
            }
            let got = triangulate(&c, &pa, &c, &pb, &ua, &ub, &params).unwrap();
            prop_assert!((got - x).norm() < 1e-6);
        }
    }
}
