//! Weighted, Huber-robust reprojection least squares: Levenberg-Marquardt with
//! a Schur complement on the points, and motion-only Gauss-Newton.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6};

use super::MappingError;
use crate::geometry::{skew, Landmark3D, PinholeCamera, PoseSE3, MIN_DEPTH};

/// 2-DoF chi-square 95% gate.
pub const CHI2_2DOF: f64 = 5.991;

/// Huber kernel on a squared Mahalanobis error.
pub fn huber(s: f64, delta_sq: f64) -> f64 {
    if s <= delta_sq {
        s
    } else {
        2.0 * (delta_sq * s).sqrt() - delta_sq
    }
}

/// Derivative of [`huber`] with respect to `s`.
fn huber_weight(s: f64, delta_sq: f64) -> f64 {
    if s <= delta_sq {
        1.0
    } else {
        (delta_sq / s).sqrt()
    }
}

/// Robust cost charged to a residual whose point falls behind the camera.
fn behind_camera_cost(delta_sq: f64) -> f64 {
    huber(1e6, delta_sq)
}

/// `π(T X) − u`, or `None` behind the camera.
pub fn reprojection_residual(
    camera: &PinholeCamera,
    pose: &PoseSE3,
    point: &Landmark3D,
    pixel: &Vector2<f64>,
) -> Option<Vector2<f64>> {
    camera.project_camera_point(&pose.transform(point)).map(|p| p - pixel)
}

/// Jacobians of the projection with respect to the left pose perturbation
/// `(ω, υ)` and the world point.
pub fn reprojection_jacobians(
    camera: &PinholeCamera,
    pose: &PoseSE3,
    point: &Landmark3D,
) -> Option<(nalgebra::Matrix2x6<f64>, Matrix2x3<f64>)> {
    let pc = pose.transform(point);
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let jp = camera.projection_jacobian(&pc);
    let mut dp = nalgebra::Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&pc)));
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    Some((jp * dp, jp * pose.rotation_matrix()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaObservation {
    pub pose: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
    /// Scalar of the information matrix `Λ = w·I`.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleProblem {
    pub cameras: Vec<PinholeCamera>,
    pub poses: Vec<PoseSE3>,
    pub pose_fixed: Vec<bool>,
    pub points: Vec<Landmark3D>,
    pub observations: Vec<BaObservation>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmParams {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub min_relative_decrease: f64,
    pub huber_delta_sq: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self { max_iterations: 20, initial_damping: 1e-4, min_relative_decrease: 1e-6, huber_delta_sq: CHI2_2DOF }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LmReport {
    pub iterations: usize,
    pub accepted: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl BundleProblem {
    pub fn cost(&self, delta_sq: f64) -> f64 {
        self.cost_with(&self.poses, &self.points, delta_sq)
    }

    fn cost_with(&self, poses: &[PoseSE3], points: &[Landmark3D], delta_sq: f64) -> f64 {
        self.observations
            .iter()
            .map(|o| {
                match reprojection_residual(&self.cameras[o.pose], &poses[o.pose], &points[o.point], &o.pixel) {
                    Some(r) => huber(o.weight * r.norm_squared(), delta_sq),
                    None => behind_camera_cost(delta_sq),
                }
            })
            .sum()
    }

    /// Squared weighted error of every observation (infinite behind the camera).
    pub fn chi2(&self) -> Vec<f64> {
        self.observations
            .iter()
            .map(|o| {
                reprojection_residual(&self.cameras[o.pose], &self.poses[o.pose], &self.points[o.point], &o.pixel)
                    .map_or(f64::INFINITY, |r| o.weight * r.norm_squared())
            })
            .collect()
    }

    /// Gauge and observability checks run before optimising.
    pub fn check_rank(&self) -> Result<(), MappingError> {
        if !self.pose_fixed.iter().any(|&f| f) {
            return Err(MappingError::RankDeficient("no fixed keyframe to anchor the gauge".into()));
        }
        let mut counts = vec![0usize; self.points.len()];
        for o in &self.observations {
            counts[o.point] += 1;
        }
        if !counts.iter().any(|&c| c >= 2) {
            return Err(MappingError::RankDeficient("no point is observed twice".into()));
        }
        let mut seen = vec![false; self.poses.len()];
        for o in &self.observations {
            seen[o.pose] = true;
        }
        if let Some(i) = (0..self.poses.len()).find(|&i| !self.pose_fixed[i] && !seen[i]) {
            return Err(MappingError::RankDeficient(format!("free pose {i} has no observations")));
        }
        Ok(())
    }
}

struct Linearization {
    b: Vec<Matrix6<f64>>,
    gp: Vec<Vector6<f64>>,
    c: Vec<Matrix3<f64>>,
    gx: Vec<Vector3<f64>>,
    /// Per point: (free pose slot, E block) pairs.
    e: Vec<Vec<(usize, Matrix6x3<f64>)>>,
}

fn linearize(problem: &BundleProblem, slots: &[Option<usize>], n_free: usize, delta_sq: f64) -> Linearization {
    let np = problem.points.len();
    let mut lin = Linearization {
        b: vec![Matrix6::zeros(); n_free],
        gp: vec![Vector6::zeros(); n_free],
        c: vec![Matrix3::zeros(); np],
        gx: vec![Vector3::zeros(); np],
        e: vec![Vec::new(); np],
    };
    for o in &problem.observations {
        let cam = &problem.cameras[o.pose];
        let pose = &problem.poses[o.pose];
        let x = &problem.points[o.point];
        let (Some(r), Some((jp, jx))) = (reprojection_residual(cam, pose, x, &o.pixel), reprojection_jacobians(cam, pose, x))
        else {
            continue;
        };
        let s = o.weight * r.norm_squared();
        let w = o.weight * huber_weight(s, delta_sq);
        lin.c[o.point] += w * jx.transpose() * jx;
        lin.gx[o.point] += w * jx.transpose() * r;
        if let Some(slot) = slots[o.pose] {
            lin.b[slot] += w * jp.transpose() * jp;
            lin.gp[slot] += w * jp.transpose() * r;
            lin.e[o.point].push((slot, w * jp.transpose() * jx));
        }
    }
    lin
}

fn damp3(m: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let mut out = *m;
    for i in 0..3 {
        out[(i, i)] = m[(i, i)] * (1.0 + lambda) + 1e-12;
    }
    out
}

/// Solves the damped normal equations; `None` when the reduced system is
/// not positive definite.
fn solve_step(lin: &Linearization, n_free: usize, lambda: f64) -> Option<(Vec<Vector6<f64>>, Vec<Vector3<f64>>)> {
    let dim = 6 * n_free;
    let mut s = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for j in 0..n_free {
        let mut bj = lin.b[j];
        for i in 0..6 {
            bj[(i, i)] *= 1.0 + lambda;
        }
        s.fixed_view_mut::<6, 6>(6 * j, 6 * j).copy_from(&bj);
        rhs.fixed_rows_mut::<6>(6 * j).copy_from(&(-lin.gp[j]));
    }
    let mut c_inv = Vec::with_capacity(lin.c.len());
    for (i, c) in lin.c.iter().enumerate() {
        let inv = damp3(c, lambda).try_inverse()?;
        let e = &lin.e[i];
        for &(a, ea) in e {
            let ea_cinv = ea * inv;
            let upd = ea_cinv * lin.gx[i];
            let mut seg = rhs.fixed_rows_mut::<6>(6 * a);
            seg += upd;
            for &(b, eb) in e {
                let mut block = s.fixed_view_mut::<6, 6>(6 * a, 6 * b);
                block -= ea_cinv * eb.transpose();
            }
        }
        c_inv.push(inv);
    }
    let dp = if dim > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    let pose_steps: Vec<Vector6<f64>> = (0..n_free).map(|j| dp.fixed_rows::<6>(6 * j).into_owned()).collect();
    let point_steps = (0..lin.c.len())
        .map(|i| {
            let mut r = -lin.gx[i];
            for &(a, ea) in &lin.e[i] {
                r -= ea.transpose() * pose_steps[a];
            }
            c_inv[i] * r
        })
        .collect();
    Some((pose_steps, point_steps))
}

/// Levenberg-Marquardt on the robust weighted reprojection error. Fixed poses
/// stay put; every accepted step lowers the cost.
pub fn solve_bundle(problem: &mut BundleProblem, params: &LmParams) -> Result<LmReport, MappingError> {
    problem.check_rank()?;
    let delta_sq = params.huber_delta_sq;
    let mut slots = vec![None; problem.poses.len()];
    let mut n_free = 0;
    for (i, fixed) in problem.pose_fixed.iter().enumerate() {
        if !fixed {
            slots[i] = Some(n_free);
            n_free += 1;
        }
    }
    let mut cost = problem.cost(delta_sq);
    let mut report = LmReport { initial_cost: cost, final_cost: cost, cost_history: vec![cost], ..Default::default() };
    let mut lambda = params.initial_damping;
    let mut lin = linearize(problem, &slots, n_free, delta_sq);
    let mut first_solve = true;
    while report.iterations < params.max_iterations && cost > 1e-24 {
        report.iterations += 1;
        let Some((dp, dx)) = solve_step(&lin, n_free, lambda) else {
            if first_solve && lambda >= 1e8 {
                return Err(MappingError::RankDeficient("reduced camera system is singular".into()));
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        first_solve = false;
        let poses: Vec<PoseSE3> = problem
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| slots[i].map_or(*p, |s| p.retract(&dp[s])))
            .collect();
        let points: Vec<Landmark3D> = problem.points.iter().zip(&dx).map(|(x, d)| x + d).collect();
        let candidate = problem.cost_with(&poses, &points, delta_sq);
        if candidate < cost {
            let decrease = (cost - candidate) / cost;
            problem.poses = poses;
            problem.points = points;
            cost = candidate;
            report.accepted += 1;
            report.cost_history.push(cost);
            lambda = (lambda * 0.5).max(1e-12);
            if decrease < params.min_relative_decrease {
                break;
            }
            lin = linearize(problem, &slots, n_free, delta_sq);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    report.final_cost = cost;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseOptimizationParams {
    pub rounds: usize,
    pub iterations: usize,
    pub chi2_threshold: f64,
    pub huber_delta_sq: f64,
}

impl Default for PoseOptimizationParams {
    fn default() -> Self {
        Self { rounds: 4, iterations: 10, chi2_threshold: CHI2_2DOF, huber_delta_sq: CHI2_2DOF }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseOptimization {
    pub pose: PoseSE3,
    pub inliers: Vec<bool>,
    /// Robust cost of `pose` over the final inliers.
    pub cost: f64,
}

/// Robust weighted cost of a pose over the masked correspondences.
pub fn pose_cost(
    camera: &PinholeCamera,
    pose: &PoseSE3,
    correspondences: &[(Landmark3D, Vector2<f64>, f64)],
    mask: &[bool],
    delta_sq: f64,
) -> f64 {
    correspondences
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, u, w), _)| match reprojection_residual(camera, pose, x, u) {
            Some(r) => huber(w * r.norm_squared(), delta_sq),
            None => behind_camera_cost(delta_sq),
        })
        .sum()
}

/// Motion-only optimisation: landmarks fixed, Gauss-Newton rounds with
/// chi-square inlier re-classification in between. The result never has a
/// higher cost than the initial pose on the final inlier set.
pub fn optimize_pose(
    camera: &PinholeCamera,
    initial: &PoseSE3,
    correspondences: &[(Landmark3D, Vector2<f64>, f64)],
    params: &PoseOptimizationParams,
) -> PoseOptimization {
    let delta_sq = params.huber_delta_sq;
    let mut mask = vec![true; correspondences.len()];
    let mut pose = *initial;
    for round in 0..params.rounds {
        let mut cost = pose_cost(camera, &pose, correspondences, &mask, delta_sq);
        for _ in 0..params.iterations {
            let mut h = Matrix6::zeros();
            let mut g = Vector6::zeros();
            for ((x, u, w), _) in correspondences.iter().zip(&mask).filter(|(_, &m)| m) {
                let (Some(r), Some((jp, _))) =
                    (reprojection_residual(camera, &pose, x, u), reprojection_jacobians(camera, &pose, x))
                else {
                    continue;
                };
                let s = w * r.norm_squared();
                let k = w * huber_weight(s, delta_sq);
                h += k * jp.transpose() * jp;
                g += k * jp.transpose() * r;
            }
            let Some(chol) = h.cholesky() else { break };
            let step = -chol.solve(&g);
            let candidate = pose.retract(&step);
            let c = pose_cost(camera, &candidate, correspondences, &mask, delta_sq);
            if c >= cost {
                break;
            }
            let relative = (cost - c) / cost.max(1e-300);
            pose = candidate;
            cost = c;
            if relative < 1e-10 || step.norm() < 1e-12 {
                break;
            }
        }
        if round + 1 < params.rounds {
            for (i, (x, u, w)) in correspondences.iter().enumerate() {
                mask[i] = reprojection_residual(camera, &pose, x, u)
                    .is_some_and(|r| w * r.norm_squared() <= params.chi2_threshold);
            }
            if mask.iter().filter(|&&m| m).count() < 3 {
                break;
            }
        }
    }
    for (i, (x, u, w)) in correspondences.iter().enumerate() {
        mask[i] = reprojection_residual(camera, &pose, x, u).is_some_and(|r| w * r.norm_squared() <= params.chi2_threshold);
    }
    let cost = pose_cost(camera, &pose, correspondences, &mask, delta_sq);
    let initial_cost = pose_cost(camera, initial, correspondences, &mask, delta_sq);
    if initial_cost < cost {
        return PoseOptimization { pose: *initial, inliers: mask, cost: initial_cost };
    }
    PoseOptimization { pose, inliers: mask, cost }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
        PoseSE3::new(
            UnitQuaternion::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
        )
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cam();
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let x = pose.inverse().transform(&Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(2.0..6.0),
            ));
            let (jp, jx) = reprojection_jacobians(&c, &pose, &x).unwrap();
            let f = |p: &PoseSE3, y: &Vector3<f64>| c.project_camera_point(&p.transform(y)).unwrap();
            let h = 1e-6;
            for k in 0..6 {
                let mut d = Vector6::zeros();
                d[k] = h;
                let num = (f(&pose.retract(&d), &x) - f(&pose.retract(&-d), &x)) / (2.0 * h);
                let col = jp.column(k);
                assert!((num - col).norm() <= 1e-5 * col.norm().max(1.0));
            }
            for k in 0..3 {
                let mut d = Vector3::zeros();
                d[k] = h;
                let num = (f(&pose, &(x + d)) - f(&pose, &(x - d))) / (2.0 * h);
                let col = jx.column(k);
                assert!((num - col).norm() <= 1e-5 * col.norm().max(1.0));
            }
        }
    }

    fn synthetic_problem(seed: u64) -> (BundleProblem, Vec<PoseSE3>, Vec<Landmark3D>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cam();
        let points: Vec<Landmark3D> = (0..120)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(4.0..8.0)))
            .collect();
        let poses: Vec<PoseSE3> = (0..6)
            .map(|i| PoseSE3::new(UnitQuaternion::from_euler_angles(0.0, 0.02 * i as f64, 0.0), Vector3::new(-0.2 * i as f64, 0.0, 0.0)))
            .collect();
        let mut observations = Vec::new();
        for (j, p) in poses.iter().enumerate() {
            for (i, x) in points.iter().enumerate() {
                if let Some(u) = c.project_camera_point(&p.transform(x)) {
                    observations.push(BaObservation { pose: j, point: i, pixel: u, weight: 0.5 + 0.5 * rng.random::<f64>() });
                }
            }
        }
        let problem = BundleProblem {
            cameras: vec![c; poses.len()],
            poses: poses.clone(),
            pose_fixed: (0..poses.len()).map(|j| j < 2).collect(),
            points: points.clone(),
            observations,
        };
        (problem, poses, points)
    }

    #[test]
    fn recovers_perturbed_window() {
        let (mut problem, poses, points) = synthetic_problem(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for j in 2..problem.poses.len() {
            let d = Vector6::new(0.02, -0.02, 0.01, 0.05, -0.05, 0.03) * rng.random_range(0.5..1.0);
            problem.poses[j] = problem.poses[j].retract(&d);
        }
        for x in &mut problem.points {
            *x += Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        }
        let report = solve_bundle(&mut problem, &LmParams::default()).unwrap();
        for w in report.cost_history.windows(2) {
            assert!(w[1] < w[0]);
        }
        for (a, b) in problem.poses.iter().zip(&poses) {
            let (ang, tr) = a.difference(b);
            assert!(ang < 1e-6 && tr < 1e-6, "{ang} {tr}");
        }
        for (a, b) in problem.points.iter().zip(&points) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn optimal_configuration_is_left_alone() {
        let (mut problem, poses, _) = synthetic_problem(4);
        let report = solve_bundle(&mut problem, &LmParams::default()).unwrap();
        assert_eq!(report.accepted, 0);
        assert!(report.final_cost.abs() < 1e-12);
        assert_eq!(problem.poses, poses);
    }

    #[test]
    fn unanchored_problem_is_rank_deficient() {
        let (mut problem, _, _) = synthetic_problem(5);
        problem.pose_fixed = vec![false; problem.poses.len()];
        let before = problem.clone();
        assert!(matches!(solve_bundle(&mut problem, &LmParams::default()), Err(MappingError::RankDeficient(_))));
        assert_eq!(problem, before);
    }

    #[test]
    fn motion_only_flags_outliers() {
        let (problem, poses, points) = synthetic_problem(6);
        let c = cam();
        let truth = poses[3];
        let mut corr: Vec<(Landmark3D, Vector2<f64>, f64)> = problem
            .observations
            .iter()
            .filter(|o| o.pose == 3)
            .map(|o| (points[o.point], o.pixel, 1.0))
            .collect();
        let n = corr.len();
        for item in corr.iter_mut().take(n / 5) {
            item.1 += Vector2::new(40.0, -30.0);
        }
        let start = truth.retract(&Vector6::new(0.01, 0.01, -0.01, 0.05, 0.02, -0.03));
        let out = optimize_pose(&c, &start, &corr, &PoseOptimizationParams::default());
        let (ang, tr) = out.pose.difference(&truth);
        assert!(ang < 1e-6 && tr < 1e-6);
        for (i, inlier) in out.inliers.iter().enumerate() {
            assert_eq!(*inlier, i >= n / 5);
        }
        let initial = pose_cost(&c, &start, &corr, &out.inliers, CHI2_2DOF);
        assert!(out.cost <= initial);
    }
}
