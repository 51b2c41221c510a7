//! Absolute pose from 2D-3D correspondences: Grunert's P3P inside RANSAC,
//! followed by a Gauss-Newton polish over all inliers.

use nalgebra::{Matrix4, Matrix6, Vector2, Vector3, Vector6};

use super::ransac::{draw, required_iterations};
use super::{umeyama_svd, GeometryError, Landmark3D, PinholeCamera, PoseSE3, RansacParams, MIN_DEPTH};

#[derive(Clone, Debug, PartialEq)]
pub struct PnpEstimate {
    pub pose: PoseSE3,
    pub inliers: Vec<bool>,
}

impl PnpEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn real_quartic_roots(c: [f64; 5]) -> Vec<f64> {
    let lead = c[0];
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || lead.abs() < 1e-12 * scale {
        return Vec::new();
    }
    let mut companion = Matrix4::zeros();
    for i in 0..4 {
        companion[(0, i)] = -c[i + 1] / lead;
    }
    for i in 1..4 {
        companion[(i, i - 1)] = 1.0;
    }
    let eval = |x: f64| (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
    let deriv = |x: f64| ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..3 {
                let d = deriv(x);
                if d.abs() > 1e-300 {
                    x -= eval(x) / d;
                }
            }
            x
        })
        .collect()
}

/// Grunert's three-point solver.
///
/// `bearings` are unit rays in the camera frame; returns every pose
/// consistent with the three correspondences (up to four).
pub fn p3p(bearings: &[Vector3<f64>; 3], points: &[Landmark3D; 3]) -> Vec<PoseSE3> {
    let [f1, f2, f3] = bearings;
    let [x1, x2, x3] = points;
    let a2 = (x2 - x3).norm_squared();
    let b2 = (x1 - x3).norm_squared();
    let c2 = (x1 - x2).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = f2.dot(f3);
    let cb = f1.dot(f3);
    let cg = f1.dot(f2);
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;

    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];

    let mut poses = Vec::new();
    for v in real_quartic_roots(coeffs) {
        if v <= 0.0 {
            continue;
        }
        let denom = 2.0 * (cg - v * ca);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
        if u <= 0.0 {
            continue;
        }
        let d = 1.0 + v * v - 2.0 * v * cb;
        if d <= 0.0 {
            continue;
        }
        let s1 = (b2 / d).sqrt();
        let cam_pts = [f1 * s1, f2 * (u * s1), f3 * (v * s1)];
        if let Ok(sim) = umeyama_svd(&points[..], &cam_pts[..], false) {
            poses.push(sim.to_se3());
        }
    }
    poses
}

fn reprojection_error(camera: &PinholeCamera, pose: &PoseSE3, x: &Landmark3D, pixel: &Vector2<f64>) -> f64 {
    match camera.project_camera_point(&pose.transform(x)) {
        Some(p) => (p - pixel).norm(),
        None => f64::INFINITY,
    }
}

/// Unweighted Gauss-Newton polish of a pose over the selected correspondences.
pub fn refine_pose(
    camera: &PinholeCamera,
    pose: &PoseSE3,
    correspondences: &[(Landmark3D, Vector2<f64>)],
    mask: &[bool],
    iterations: usize,
) -> PoseSE3 {
    let mut current = *pose;
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut used = 0;
        for ((x, pix), &keep) in correspondences.iter().zip(mask) {
            if !keep {
                continue;
            }
            let pc = current.transform(x);
            if pc.z <= MIN_DEPTH {
                continue;
            }
            let r = camera.project_camera_point(&pc).expect("depth checked") - pix;
            let j = pose_jacobian(camera, &pc);
            h += j.transpose() * j;
            g += j.transpose() * r;
            used += 1;
        }
        if used < 3 {
            break;
        }
        let Some(chol) = h.cholesky() else { break };
        let step = -chol.solve(&g);
        current = current.retract(&step);
        if step.norm() < 1e-12 {
            break;
        }
    }
    current
}

/// Pixel Jacobian with respect to the left pose perturbation `(ω, υ)`.
pub(crate) fn pose_jacobian(camera: &PinholeCamera, pc: &Vector3<f64>) -> nalgebra::Matrix2x6<f64> {
    let jp = camera.projection_jacobian(pc);
    let mut dp = nalgebra::Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-super::skew(pc)));
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
    jp * dp
}

/// RANSAC over minimal P3P samples; the best hypothesis is polished on its
/// inliers and the inlier set re-evaluated.
pub fn solve_pnp_ransac(
    camera: &PinholeCamera,
    correspondences: &[(Landmark3D, Vector2<f64>)],
    params: &RansacParams,
) -> Result<PnpEstimate, GeometryError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::InsufficientCorrespondences { needed: 4, got: n });
    }
    let bearings: Vec<Vector3<f64>> = correspondences.iter().map(|(_, p)| camera.bearing(p)).collect();
    let mut rng = params.rng();
    let mut best: Option<(PoseSE3, usize)> = None;
    let mut budget = params.max_iterations;
    let mut iter = 0;
    while iter < budget.min(params.max_iterations) {
        iter += 1;
        let idx = draw(&mut rng, n, 3);
        let rays = [bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]];
        let pts = [correspondences[idx[0]].0, correspondences[idx[1]].0, correspondences[idx[2]].0];
        for pose in p3p(&rays, &pts) {
            let count = correspondences
                .iter()
                .filter(|(x, p)| reprojection_error(camera, &pose, x, p) <= params.threshold)
                .count();
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((pose, count));
                budget = required_iterations(count as f64 / n as f64, 3, params.confidence);
            }
        }
    }
    let (pose, _) = best.ok_or(GeometryError::NoConsensus { inliers: 0, needed: params.min_inliers })?;

    let mut mask: Vec<bool> = correspondences
        .iter()
        .map(|(x, p)| reprojection_error(camera, &pose, x, p) <= params.threshold)
        .collect();
    let mut refined = pose;
    for _ in 0..2 {
        refined = refine_pose(camera, &refined, correspondences, &mask, 10);
        mask = correspondences
            .iter()
            .map(|(x, p)| reprojection_error(camera, &refined, x, p) <= params.threshold)
            .collect();
    }
    let inliers = mask.iter().filter(|&&b| b).count();
    if inliers < params.min_inliers.max(4) {
        return Err(GeometryError::NoConsensus { inliers, needed: params.min_inliers });
    }
    Ok(PnpEstimate { pose: refined, inliers: mask })
}
