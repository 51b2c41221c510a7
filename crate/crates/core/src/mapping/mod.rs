//! Keyframe and landmark storage, covisibility graph, point creation, bundle
//! adjustment with adaptive information weights and redundancy culling.

mod ba;
mod create;
mod cull;
pub(crate) mod map;
mod snapshot;
mod weights;

pub use ba::{
    huber, optimize_pose, pose_cost, reprojection_jacobians, reprojection_residual, solve_bundle, BaObservation,
    BundleProblem, LmParams, LmReport, PoseOptimization, PoseOptimizationParams, CHI2_2DOF,
};
pub use create::{create_map_points, create_with_neighbor, fundamental, match_epipolar, CreateParams};
pub use cull::{cull, redundancy, CullParams, CullReport};
pub use map::{KeyFrame, KeyFrameId, MapPoint, PointId, WorldMap};
pub use snapshot::MapSnapshot;
pub use weights::{information_matrix, information_weight, observation_weight, DEFAULT_LAMBDA};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::features::dot;
use crate::geometry::project;
use crate::matching::MatchingError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("unknown keyframe {0}")]
    UnknownKeyFrame(KeyFrameId),
    #[error("unknown map point {0}")]
    UnknownPoint(PointId),
    #[error("feature {feature} of keyframe {kf} cannot take point {point}")]
    Association { kf: KeyFrameId, feature: usize, point: PointId },
    #[error("rank-deficient problem: {0}")]
    RankDeficient(String),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaParams {
    /// Covisible keyframes optimised together with the centre keyframe.
    pub window: usize,
    pub lambda: u32,
    /// Per-observation weights `Λ_i`; identity weights when false.
    pub adaptive_weights: bool,
    pub lm: LmParams,
    /// Weighted squared error above which an observation is dropped afterwards.
    pub outlier_chi2: f64,
}

impl Default for BaParams {
    fn default() -> Self {
        Self {
            window: 10,
            lambda: DEFAULT_LAMBDA,
            adaptive_weights: true,
            lm: LmParams::default(),
            outlier_chi2: CHI2_2DOF,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaReport {
    pub lm: LmReport,
    pub keyframes: Vec<KeyFrameId>,
    pub anchors: Vec<KeyFrameId>,
    pub points: usize,
    /// Observations removed as outliers after the solve.
    pub pruned: usize,
}

/// Per-observation weight of `point` under `params`.
pub fn observation_information(point: &MapPoint, params: &BaParams) -> f64 {
    if params.adaptive_weights {
        information_weight(point.score(), point.obs(), params.lambda)
    } else {
        1.0
    }
}

struct Assembled {
    problem: BundleProblem,
    kf_ids: Vec<KeyFrameId>,
    point_ids: Vec<PointId>,
    obs_keys: Vec<(PointId, KeyFrameId)>,
}

fn assemble(
    map: &WorldMap,
    free: &BTreeSet<KeyFrameId>,
    fixed_extra: &BTreeSet<KeyFrameId>,
    points: &[PointId],
    params: &BaParams,
) -> Assembled {
    let mut kf_ids: Vec<KeyFrameId> = free.iter().chain(fixed_extra.iter()).copied().collect();
    kf_ids.sort_unstable();
    kf_ids.dedup();
    let slot: BTreeMap<KeyFrameId, usize> = kf_ids.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut problem = BundleProblem {
        cameras: kf_ids.iter().map(|k| map.keyframes[k].camera).collect(),
        poses: kf_ids.iter().map(|k| map.keyframes[k].pose).collect(),
        pose_fixed: kf_ids.iter().map(|k| !free.contains(k) || map.origin == Some(*k)).collect(),
        points: Vec::new(),
        observations: Vec::new(),
    };
    let mut point_ids = Vec::new();
    let mut obs_keys = Vec::new();
    for &p in points {
        let mp = &map.points[&p];
        let weight = observation_information(mp, params);
        let obs: Vec<_> = mp.observations.iter().filter(|(k, _)| slot.contains_key(k)).collect();
        if obs.len() < 2 {
            continue;
        }
        let index = problem.points.len();
        problem.points.push(mp.position);
        point_ids.push(p);
        for (&k, &f) in obs {
            problem.observations.push(BaObservation {
                pose: slot[&k],
                point: index,
                pixel: map.keyframes[&k].features.keypoints[f],
                weight,
            });
            obs_keys.push((p, k));
        }
    }
    Assembled { problem, kf_ids, point_ids, obs_keys }
}

fn solve_and_write(map: &mut WorldMap, mut a: Assembled, params: &BaParams, lm: &LmParams) -> Result<BaReport, MappingError> {
    let report = solve_bundle(&mut a.problem, lm)?;
    for (i, &k) in a.kf_ids.iter().enumerate() {
        if !a.problem.pose_fixed[i] {
            map.keyframes.get_mut(&k).expect("live keyframe").pose = a.problem.poses[i];
        }
    }
    for (i, &p) in a.point_ids.iter().enumerate() {
        map.points.get_mut(&p).expect("live point").position = a.problem.points[i];
    }
    let mut pruned = 0;
    for (chi2, &(p, k)) in a.problem.chi2().iter().zip(&a.obs_keys) {
        if *chi2 > params.outlier_chi2 && map.points.contains_key(&p) {
            map.remove_observation(p, k);
            pruned += 1;
        }
    }
    let anchors = a.kf_ids.iter().zip(&a.problem.pose_fixed).filter(|(_, &f)| f).map(|(&k, _)| k).collect();
    let keyframes = a.kf_ids.iter().zip(&a.problem.pose_fixed).filter(|(_, &f)| !f).map(|(&k, _)| k).collect();
    Ok(BaReport { lm: report, keyframes, anchors, points: a.point_ids.len(), pruned })
}

/// Optimises `center` and its `window` best covisible keyframes together with
/// every point they observe. Other observers of those points stay fixed, as
/// does the origin keyframe; a window with no such anchor holds its oldest
/// keyframe instead. On error the map is untouched.
pub fn local_bundle_adjust(map: &mut WorldMap, center: KeyFrameId, params: &BaParams) -> Result<BaReport, MappingError> {
    map.keyframe(center)?;
    let mut free: BTreeSet<KeyFrameId> = map.best_covisible(center, params.window).into_iter().collect();
    free.insert(center);
    let window: Vec<KeyFrameId> = free.iter().copied().collect();
    let points = map.points_of(&window);
    let mut anchors = BTreeSet::new();
    for p in &points {
        for k in map.points[p].observations.keys() {
            if !free.contains(k) {
                anchors.insert(*k);
            }
        }
    }
    let origin_inside = map.origin.is_some_and(|o| free.contains(&o));
    if anchors.is_empty() && !origin_inside && free.len() >= 2 {
        // A fragment without anchors holds its oldest keyframe to fix the gauge.
        let oldest = *free.first().expect("non-empty window");
        free.remove(&oldest);
        anchors.insert(oldest);
    }
    let assembled = assemble(map, &free, &anchors, &points, params);
    solve_and_write(map, assembled, params, &params.lm)
}

/// Optimises every keyframe except the origin and every point seen twice,
/// for at most `max_iterations` LM iterations.
pub fn global_bundle_adjust(map: &mut WorldMap, params: &BaParams, max_iterations: usize) -> Result<BaReport, MappingError> {
    let free: BTreeSet<KeyFrameId> = map.keyframes.keys().copied().collect();
    let points: Vec<PointId> = map.points.keys().copied().collect();
    let assembled = assemble(map, &free, &BTreeSet::new(), &points, params);
    let lm = LmParams { max_iterations, ..params.lm };
    solve_and_write(map, assembled, params, &lm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuseParams {
    /// Search radius around the projection, pixels.
    pub radius: f64,
    pub min_similarity: f64,
}

impl Default for FuseParams {
    fn default() -> Self {
        Self { radius: 4.0, min_similarity: 0.7 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FuseStats {
    /// Observations added on empty feature slots.
    pub added: usize,
    /// Duplicate points merged away.
    pub merged: usize,
}

impl std::ops::AddAssign for FuseStats {
    fn add_assign(&mut self, other: Self) {
        self.added += other.added;
        self.merged += other.merged;
    }
}

/// Projects `points` into `kf`. A point lands on the most similar feature
/// inside the search radius: an empty slot gains the observation, an occupied
/// slot merges the two points keeping the one with more observations.
pub fn fuse_into(map: &mut WorldMap, kf: KeyFrameId, points: &[PointId], params: &FuseParams) -> Result<FuseStats, MappingError> {
    let mut stats = FuseStats::default();
    for &p in points {
        let Some(mp) = map.points.get(&p) else { continue };
        if mp.observations.contains_key(&kf) {
            continue;
        }
        let k = map.keyframe(kf)?;
        let Some(u) = project(&k.camera, &k.pose, &mp.position) else { continue };
        if !k.camera.contains(&u) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, kp) in k.features.keypoints.iter().enumerate() {
            if (kp - u).norm() >= params.radius {
                continue;
            }
            let s = dot(&mp.descriptor, k.features.descriptor(i)) as f64;
            if s >= params.min_similarity && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let Some((feature, _)) = best else { continue };
        match k.points[feature] {
            None => {
                map.add_observation(p, kf, feature)?;
                map.update_descriptor(p);
                stats.added += 1;
            }
            Some(other) if other != p => {
                let (keep, drop) = if map.points[&other].obs() >= map.points[&p].obs() { (other, p) } else { (p, other) };
                map.merge_points(keep, drop)?;
                stats.merged += 1;
            }
            Some(_) => {}
        }
    }
    Ok(stats)
}

/// Two-way fusion between `kf` and its best covisible neighbours.
pub fn fuse_neighbors(map: &mut WorldMap, kf: KeyFrameId, neighbors: usize, params: &FuseParams) -> Result<FuseStats, MappingError> {
    let near = map.best_covisible(kf, neighbors);
    let own = map.points_of(&[kf]);
    let mut fused = FuseStats::default();
    for &n in &near {
        fused += fuse_into(map, n, &own, params)?;
    }
    let theirs = map.points_of(&near);
    fused += fuse_into(map, kf, &theirs, params)?;
    Ok(fused)
}
