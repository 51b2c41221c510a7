use nalgebra::Vector2;
use rand::seq::index::sample;

use super::LoopError;
use crate::features::dot;
use crate::geometry::{solve_sim3_umeyama, Landmark3D, PinholeCamera, PoseSim3};
use crate::mapping::{KeyFrameId, PointId, WorldMap};
use crate::matching::{match_sets, MatcherBackend, DEFAULT_MIN_CONFIDENCE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3Params {
    /// Point-to-point matches required before RANSAC.
    pub min_matches: usize,
    pub min_inliers: usize,
    pub iterations: usize,
    /// Squared reprojection error in pixels for an inlier, in both frames.
    pub inlier_chi2: f64,
    /// Estimate scale (monocular) or keep it at one (stereo).
    pub with_scale: bool,
    pub min_confidence: f64,
    pub seed: u64,
}

impl Default for Sim3Params {
    fn default() -> Self {
        Self {
            min_matches: 20,
            min_inliers: 20,
            iterations: 300,
            inlier_chi2: 9.21,
            with_scale: true,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sim3Estimate {
    /// Maps camera-frame coordinates of `K_m` to those of `K_a`.
    pub t_am: PoseSim3,
    /// Inlier map-point pairs `(point of K_a, point of K_m)`.
    pub inliers: Vec<(PointId, PointId)>,
    pub matches: usize,
}

struct Pair {
    point_a: PointId,
    point_m: PointId,
    xa: Landmark3D,
    xm: Landmark3D,
    ua: Vector2<f64>,
    um: Vector2<f64>,
}

fn is_inlier(t_am: &PoseSim3, t_ma: &PoseSim3, cam_a: &PinholeCamera, cam_m: &PinholeCamera, p: &Pair, chi2: f64) -> bool {
    let in_a = cam_a.project_camera_point(&t_am.transform(&p.xm));
    let in_m = cam_m.project_camera_point(&t_ma.transform(&p.xa));
    match (in_a, in_m) {
        (Some(a), Some(m)) => (a - p.ua).norm_squared() <= chi2 && (m - p.um).norm_squared() <= chi2,
        _ => false,
    }
}

fn inlier_mask(t_am: &PoseSim3, cam_a: &PinholeCamera, cam_m: &PinholeCamera, pairs: &[Pair], chi2: f64) -> Vec<bool> {
    let t_ma = t_am.inverse();
    pairs.iter().map(|p| is_inlier(t_am, &t_ma, cam_a, cam_m, p, chi2)).collect()
}

/// Similarity between the camera frames of two keyframes from matched map
/// points: RANSAC over minimal Umeyama solutions with a reprojection test in
/// both images, refined on the final inliers.
pub fn compute_sim3(
    map: &WorldMap,
    ka: KeyFrameId,
    km: KeyFrameId,
    matcher: &mut dyn MatcherBackend,
    params: &Sim3Params,
) -> Result<Sim3Estimate, LoopError> {
    let a = map.keyframe(ka).map_err(|_| LoopError::UnknownKeyFrame(ka))?;
    let m = map.keyframe(km).map_err(|_| LoopError::UnknownKeyFrame(km))?;
    let fa: Vec<usize> = a.associated().map(|(i, _)| i).collect();
    let fm: Vec<usize> = m.associated().map(|(i, _)| i).collect();
    if fa.len() < 3 || fm.len() < 3 {
        return Err(LoopError::TooFewMatches { got: 0, needed: params.min_matches });
    }
    let matches = match_sets(matcher, &a.features.subset(&fa), &m.features.subset(&fm), params.min_confidence)
        .map_err(|e| LoopError::Parameter(e.to_string()))?;
    let mut pairs = Vec::new();
    for &(i, j, _) in &matches.pairs {
        let (point_a, point_m) = (a.points[fa[i]].expect("associated"), m.points[fm[j]].expect("associated"));
        if point_a == point_m {
            continue;
        }
        pairs.push(Pair {
            point_a,
            point_m,
            xa: a.pose.transform(&map.points[&point_a].position),
            xm: m.pose.transform(&map.points[&point_m].position),
            ua: a.features.keypoints[fa[i]],
            um: m.features.keypoints[fm[j]],
        });
    }
    if pairs.len() < params.min_matches.max(3) {
        return Err(LoopError::TooFewMatches { got: pairs.len(), needed: params.min_matches.max(3) });
    }
    let mut rng = crate::geometry::RansacParams { seed: params.seed, ..Default::default() }.rng();
    let mut best: Option<(usize, PoseSim3)> = None;
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, pairs.len(), 3);
        let src: Vec<Landmark3D> = idx.iter().map(|i| pairs[i].xm).collect();
        let dst: Vec<Landmark3D> = idx.iter().map(|i| pairs[i].xa).collect();
        let Ok(t) = solve_sim3_umeyama(&src, &dst, params.with_scale) else { continue };
        if !t.scale.is_finite() || t.scale <= 0.0 {
            continue;
        }
        let count = inlier_mask(&t, &a.camera, &m.camera, &pairs, params.inlier_chi2).iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, t));
        }
    }
    let Some((count, mut t_am)) = best else {
        return Err(LoopError::NoConsensus { inliers: 0, needed: params.min_inliers });
    };
    if count < params.min_inliers {
        return Err(LoopError::NoConsensus { inliers: count, needed: params.min_inliers });
    }
    let mut mask = inlier_mask(&t_am, &a.camera, &m.camera, &pairs, params.inlier_chi2);
    for _ in 0..3 {
        let src: Vec<Landmark3D> = pairs.iter().zip(&mask).filter(|(_, &k)| k).map(|(p, _)| p.xm).collect();
        let dst: Vec<Landmark3D> = pairs.iter().zip(&mask).filter(|(_, &k)| k).map(|(p, _)| p.xa).collect();
        let Ok(refined) = solve_sim3_umeyama(&src, &dst, params.with_scale) else { break };
        let refined_mask = inlier_mask(&refined, &a.camera, &m.camera, &pairs, params.inlier_chi2);
        if refined_mask.iter().filter(|&&b| b).count() < mask.iter().filter(|&&b| b).count() {
            break;
        }
        t_am = refined;
        mask = refined_mask;
    }
    let inliers: Vec<(PointId, PointId)> =
        pairs.iter().zip(&mask).filter(|(_, &k)| k).map(|(p, _)| (p.point_a, p.point_m)).collect();
    if inliers.len() < params.min_inliers {
        return Err(LoopError::NoConsensus { inliers: inliers.len(), needed: params.min_inliers });
    }
    Ok(Sim3Estimate { t_am, inliers, matches: pairs.len() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyParams {
    /// Covisible keyframes of `K_a` used as extra witnesses.
    pub neighbors: usize,
    /// Search radius around predicted projections, pixels.
    pub radius: f64,
    pub min_similarity: f64,
    /// Total geometric matches required to accept the loop.
    pub threshold: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { neighbors: 5, radius: 5.0, min_similarity: 0.7, threshold: 40 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Verification {
    pub passed: bool,
    pub total: usize,
    pub per_keyframe: Vec<(KeyFrameId, usize)>,
}

/// Confirms a loop hypothesis through the covisible neighbours `K_j` of
/// `K_a`: the map points of `K_m` are carried into each `K_j` by
/// `T_jm = T_ja · T_am` and counted when a similar feature lies near the
/// predicted projection.
pub fn verify_covisible(
    map: &WorldMap,
    ka: KeyFrameId,
    km: KeyFrameId,
    t_am: &PoseSim3,
    params: &VerifyParams,
) -> Result<Verification, LoopError> {
    let a = map.keyframe(ka).map_err(|_| LoopError::UnknownKeyFrame(ka))?;
    let m = map.keyframe(km).map_err(|_| LoopError::UnknownKeyFrame(km))?;
    let loop_points: Vec<PointId> = m.associated().map(|(_, p)| p).collect();
    let mut report = Verification::default();
    for kj in map.best_covisible(ka, params.neighbors) {
        let j = &map.keyframes[&kj];
        let t_ja = j.pose.compose(&a.pose.inverse()).to_sim3();
        let t_jm = t_ja.compose(t_am);
        let mut used = vec![false; j.features.len()];
        let mut count = 0;
        for p in &loop_points {
            let mp = &map.points[p];
            let Some(u) = j.camera.project_camera_point(&t_jm.transform(&m.pose.transform(&mp.position))) else {
                continue;
            };
            if !j.camera.contains(&u) {
                continue;
            }
            let hit = j
                .features
                .keypoints
                .iter()
                .enumerate()
                .filter(|(i, kp)| !used[*i] && (*kp - u).norm() < params.radius)
                .map(|(i, _)| (i, dot(&mp.descriptor, j.features.descriptor(i)) as f64))
                .filter(|(_, s)| *s >= params.min_similarity)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((i, _)) = hit {
                used[i] = true;
                count += 1;
            }
        }
        report.per_keyframe.push((kj, count));
        report.total += count;
    }
    report.passed = !report.per_keyframe.is_empty() && report.total >= params.threshold;
    Ok(report)
}
