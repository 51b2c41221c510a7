//! Per-frame front end: two-view initialisation, frame-to-frame tracking with
//! the full matcher, reference-keyframe tracking, relocalisation, local-map
//! refinement and the keyframe decision.

mod tracker;

pub use tracker::{FrameOutcome, FrameStatus, NewKeyFrame, TrackedBy, Tracker, TrackerState};

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::features::{normalized, FeatureSet};
use crate::geometry::{
    project, solve_essential_ransac, solve_pnp_ransac, triangulate, GeometryError, Landmark3D, PinholeCamera, PoseSE3,
    RansacParams, TriangulationParams,
};
use crate::loopclosure::{quantize, KeyframeDatabase, VocabularyTree};
use crate::mapping::{
    global_bundle_adjust, observation_information, optimize_pose, BaParams, KeyFrame, KeyFrameId, MappingError, PointId,
    PoseOptimizationParams, WorldMap,
};
use crate::matching::{match_sets, match_with_prior, MatchSet, MatcherBackend, MatchingError, DEFAULT_MIN_CONFIDENCE};

/// One incoming image after feature extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: u64,
    /// Seconds.
    pub timestamp: f64,
    pub features: FeatureSet,
    /// World-to-camera; present iff tracking succeeded.
    pub pose: Option<PoseSE3>,
    pub camera: PinholeCamera,
    /// Map point associated with each feature.
    pub points: Vec<Option<PointId>>,
    /// Features of the right image of a rectified stereo pair.
    pub right: Option<FeatureSet>,
}

impl Frame {
    pub fn new(id: u64, timestamp: f64, features: FeatureSet, camera: PinholeCamera) -> Self {
        let n = features.len();
        Self { id, timestamp, features, pose: None, camera, points: vec![None; n], right: None }
    }

    pub fn tracked_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackingMode {
    Uninitialized,
    Tracking,
    Lost,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("insufficient matches: {got} < {needed}")]
    InsufficientMatches { got: usize, needed: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("too few matches: {got} < {needed}")]
    TooFewMatches { got: usize, needed: usize },
    #[error("no relocalisation candidate")]
    NoCandidate,
    #[error("no candidate reached the inlier quota")]
    NoConsensus,
    #[error("no reference keyframe")]
    NoReference,
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerParams {
    /// Features both initialisation frames need.
    pub min_init_features: usize,
    /// Triangulated points an initial map needs.
    pub min_init_points: usize,
    /// Median parallax an initial pair needs, degrees.
    pub init_parallax_deg: f64,
    pub init_ba_iterations: usize,
    /// Inlier map-point matches for a frame to count as tracked.
    pub min_inliers: usize,
    pub min_confidence: f64,
    pub ransac: RansacParams,
    pub triangulation: TriangulationParams,
    pub pose: PoseOptimizationParams,
    /// Weighting of motion-only and initial adjustments.
    pub ba: BaParams,
    /// Covisible keyframes of the reference forming the local map.
    pub local_keyframes: usize,
    /// Search radius around local-map projections, pixels.
    pub local_radius: f64,
    /// Cosine a windowed match needs.
    pub min_similarity: f64,
    /// Windowed matching around motion-predicted projections in coarse
    /// tracking instead of the full matcher.
    pub prior_matching: bool,
    pub prior_radius: f64,
    /// Spawn a keyframe below this fraction of the reference's tracked points.
    pub keyframe_ratio: f64,
    pub max_keyframe_gap: u64,
    /// Consecutive failed frames before the tracker is lost.
    pub lost_after: usize,
    /// Frames an initialisation reference is kept before it is replaced.
    pub init_max_gap: u64,
    pub reloc_candidates: usize,
    /// Bag-of-words similarity a relocalisation candidate needs.
    pub reloc_min_score: f64,
    /// Stereo baseline in metres; zero for monocular input.
    pub stereo_baseline: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            min_init_features: 50,
            min_init_points: 50,
            init_parallax_deg: 1.0,
            init_ba_iterations: 20,
            min_inliers: 20,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            ransac: RansacParams::default(),
            triangulation: TriangulationParams::default(),
            pose: PoseOptimizationParams::default(),
            ba: BaParams::default(),
            local_keyframes: 20,
            local_radius: 6.0,
            min_similarity: 0.7,
            prior_matching: false,
            prior_radius: 15.0,
            keyframe_ratio: 0.8,
            max_keyframe_gap: 30,
            lost_after: 2,
            init_max_gap: 30,
            reloc_candidates: 5,
            reloc_min_score: 0.05,
            stereo_baseline: 0.0,
        }
    }
}

/// Pose and map-point associations of a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub pose: PoseSE3,
    pub points: Vec<Option<PointId>>,
    pub inliers: usize,
    /// Feature matches found before lifting to map points.
    pub matches: usize,
    /// Robust motion-only cost of `pose` over the inliers.
    pub cost: f64,
}

/// A freshly initialised map.
#[derive(Clone, Debug)]
pub struct Initialization {
    pub map: WorldMap,
    /// Keyframes created, oldest first.
    pub keyframes: Vec<KeyFrameId>,
    /// Pose of the second frame (of the only frame for stereo).
    pub pose: PoseSE3,
    /// Map point of each feature of that frame.
    pub points: Vec<Option<PointId>>,
    pub matches: usize,
}

fn correspondences(
    frame: &Frame,
    map: &WorldMap,
    points: &[Option<PointId>],
    ba: &BaParams,
) -> (Vec<usize>, Vec<(Landmark3D, Vector2<f64>, f64)>) {
    let mut index = Vec::new();
    let mut corr = Vec::new();
    for (j, p) in points.iter().enumerate() {
        let Some(mp) = p.and_then(|p| map.points.get(&p)) else { continue };
        index.push(j);
        corr.push((mp.position, frame.features.keypoints[j], observation_information(mp, ba)));
    }
    (index, corr)
}

/// Motion-only optimisation of `initial` over the associations in `points`;
/// outlier associations are dropped.
pub fn refine_frame_pose(
    frame: &Frame,
    map: &WorldMap,
    initial: &PoseSE3,
    points: Vec<Option<PointId>>,
    params: &TrackerParams,
) -> TrackResult {
    let (index, corr) = correspondences(frame, map, &points, &params.ba);
    let mut kept = vec![None; frame.features.len()];
    if corr.is_empty() {
        return TrackResult { pose: *initial, points: kept, inliers: 0, matches: 0, cost: 0.0 };
    }
    let opt = optimize_pose(&frame.camera, initial, &corr, &params.pose);
    for (k, &j) in index.iter().enumerate() {
        if opt.inliers[k] {
            kept[j] = points[j];
        }
    }
    let inliers = opt.inliers.iter().filter(|&&b| b).count();
    TrackResult { pose: opt.pose, points: kept, inliers, matches: 0, cost: opt.cost }
}

fn init_map(
    frames: &[(&Frame, PoseSE3)],
    observations: Vec<(Landmark3D, Vec<f32>, Vec<usize>)>,
    params: &TrackerParams,
    ba_iterations: usize,
) -> Result<(WorldMap, Vec<KeyFrameId>), TrackError> {
    let mut map = WorldMap::new();
    let mut ids = Vec::new();
    for (i, (f, pose)) in frames.iter().enumerate() {
        let mut kf = KeyFrame::new(f.id, f.timestamp, *pose, f.camera, f.features.clone());
        kf.parent = ids.last().copied();
        let id = map.add_keyframe(kf);
        debug_assert_eq!(ids.len(), i);
        ids.push(id);
    }
    for (x, descriptor, features) in observations {
        let p = map.add_point(x, descriptor, ids[0]);
        for (k, &feature) in features.iter().enumerate() {
            map.add_observation(p, ids[k], feature)?;
        }
    }
    if ba_iterations > 0 && ids.len() > 1 {
        global_bundle_adjust(&mut map, &params.ba, ba_iterations)?;
        let orphans: Vec<PointId> = map.points.values().filter(|p| p.obs() < ids.len()).map(|p| p.id).collect();
        for p in orphans {
            map.remove_point(p);
        }
    }
    Ok((map, ids))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Rescales the map so that the median depth seen from the origin is one.
fn normalize_scale(map: &mut WorldMap, origin: KeyFrameId) -> Result<(), TrackError> {
    let depth = map.median_depth(origin).filter(|d| *d > 0.0).ok_or_else(|| TrackError::DegenerateGeometry("no depth".into()))?;
    let s = 1.0 / depth;
    let o = map.keyframes[&origin].pose;
    for p in map.points.values_mut() {
        p.position = o.inverse().transform(&(s * o.transform(&p.position)));
    }
    for kf in map.keyframes.values_mut() {
        let rel = kf.pose.compose(&o.inverse());
        let scaled = PoseSE3::new(rel.rotation, s * rel.translation);
        kf.pose = scaled.compose(&o);
    }
    Ok(())
}

/// Builds the initial map from two monocular frames: full matching,
/// essential-matrix RANSAC, triangulation of the inliers and a global
/// adjustment, with the scale fixed so that the median depth in `a` is one.
/// `a` becomes the world frame.
pub fn initialize_monocular(
    a: &Frame,
    b: &Frame,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<Initialization, TrackError> {
    let fewest = a.features.len().min(b.features.len());
    if fewest < params.min_init_features {
        return Err(TrackError::InsufficientMatches { got: fewest, needed: params.min_init_features });
    }
    let matches = match_sets(matcher, &a.features, &b.features, params.min_confidence)?;
    if matches.len() < params.min_init_features {
        return Err(TrackError::InsufficientMatches { got: matches.len(), needed: params.min_init_features });
    }
    let pairs: Vec<_> = matches.pairs.iter().map(|&(i, j, _)| (a.features.keypoints[i], b.features.keypoints[j])).collect();
    let essential = solve_essential_ransac(&pairs, &a.camera, &params.ransac, &params.triangulation).map_err(|e| match e {
        GeometryError::InsufficientCorrespondences { got, needed } => TrackError::InsufficientMatches { got, needed },
        other => TrackError::DegenerateGeometry(other.to_string()),
    })?;
    let pose_b = essential.pose;
    let identity = PoseSE3::identity();
    let mut observations = Vec::new();
    let mut parallax = Vec::new();
    for (k, &(i, j, _)) in matches.pairs.iter().enumerate() {
        if !essential.inliers[k] {
            continue;
        }
        let (ua, ub) = pairs[k];
        let Ok(x) = triangulate(&a.camera, &identity, &b.camera, &pose_b, &ua, &ub, &params.triangulation) else {
            continue;
        };
        parallax.push(crate::geometry::parallax_angle(&a.camera, &identity, &ua, &b.camera, &pose_b, &ub).to_degrees());
        let descriptor = normalized(
            &a.features.descriptor(i).iter().zip(b.features.descriptor(j)).map(|(x, y)| x + y).collect::<Vec<f32>>(),
        );
        observations.push((x, descriptor, vec![i, j]));
    }
    if observations.len() < params.min_init_points {
        return Err(TrackError::DegenerateGeometry(format!(
            "{} points triangulated, need {}",
            observations.len(),
            params.min_init_points
        )));
    }
    let med = median(parallax).unwrap_or(0.0);
    if med < params.init_parallax_deg {
        return Err(TrackError::DegenerateGeometry(format!("median parallax {med:.3}° below {}°", params.init_parallax_deg)));
    }
    let (mut map, ids) = init_map(&[(a, identity), (b, pose_b)], observations, params, params.init_ba_iterations)?;
    if map.points.len() < params.min_init_points {
        return Err(TrackError::DegenerateGeometry(format!("{} points survive adjustment", map.points.len())));
    }
    normalize_scale(&mut map, ids[0])?;
    let kb = &map.keyframes[&ids[1]];
    Ok(Initialization { pose: kb.pose, points: kb.points.clone(), keyframes: ids, map, matches: matches.len() })
}

/// Pose of the right camera of a rectified rig whose left camera has `left`.
pub fn right_camera_pose(left: &PoseSE3, baseline: f64) -> PoseSE3 {
    PoseSE3::from_translation(Vector3::new(-baseline, 0.0, 0.0)).compose(left)
}

/// Stereo triangulation of the unassociated left features of `left` against
/// the right image; returns `(left feature, point)` pairs.
pub fn stereo_points(
    left: &FeatureSet,
    associated: &[Option<PointId>],
    right: &FeatureSet,
    camera: &PinholeCamera,
    pose: &PoseSE3,
    baseline: f64,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<Vec<(usize, Landmark3D)>, TrackError> {
    let free: Vec<usize> = (0..left.len()).filter(|&i| associated.get(i).is_none_or(|p| p.is_none())).collect();
    let subset = left.subset(&free);
    let matches = match_sets(matcher, &subset, right, params.min_confidence)?;
    let right_pose = right_camera_pose(pose, baseline);
    let mut out = Vec::new();
    for &(i, j, _) in &matches.pairs {
        let (ul, ur) = (subset.keypoints[i], right.keypoints[j]);
        // Rectified rows agree and disparity is positive for points in front.
        if (ul.y - ur.y).abs() > 2.0 || ul.x <= ur.x {
            continue;
        }
        if let Ok(x) = triangulate(camera, pose, camera, &right_pose, &ul, &ur, &params.triangulation) {
            out.push((free[i], x));
        }
    }
    Ok(out)
}

/// Builds a metric initial map with one keyframe from a rectified stereo pair.
pub fn initialize_stereo(
    frame: &Frame,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<Initialization, TrackError> {
    let right = frame.right.as_ref().ok_or_else(|| TrackError::DegenerateGeometry("no right image".into()))?;
    let fewest = frame.features.len().min(right.len());
    if fewest < params.min_init_features {
        return Err(TrackError::InsufficientMatches { got: fewest, needed: params.min_init_features });
    }
    if params.stereo_baseline <= 0.0 {
        return Err(TrackError::DegenerateGeometry("stereo baseline must be positive".into()));
    }
    let identity = PoseSE3::identity();
    let none = vec![None; frame.features.len()];
    let tri = stereo_points(&frame.features, &none, right, &frame.camera, &identity, params.stereo_baseline, matcher, params)?;
    if tri.len() < params.min_init_points {
        return Err(TrackError::DegenerateGeometry(format!("{} stereo points, need {}", tri.len(), params.min_init_points)));
    }
    let matches = tri.len();
    let observations = tri.into_iter().map(|(i, x)| (x, frame.features.descriptor(i).to_vec(), vec![i])).collect();
    let (map, ids) = init_map(&[(frame, identity)], observations, params, 0)?;
    let kf = &map.keyframes[&ids[0]];
    Ok(Initialization { pose: kf.pose, points: kf.points.clone(), keyframes: ids, map, matches })
}

/// Lifts matches from `source` features (with associations `source_points`)
/// onto the features of `frame`.
fn lift(matches: &MatchSet, source_points: &[Option<PointId>], map: &WorldMap, n: usize) -> Vec<Option<PointId>> {
    let mut points = vec![None; n];
    let mut used = BTreeSet::new();
    for &(i, j, _) in &matches.pairs {
        if let Some(p) = source_points[i].filter(|p| map.points.contains_key(p)) {
            if used.insert(p) {
                points[j] = Some(p);
            }
        }
    }
    points
}

/// Projections of the associated map points of `features` under `pose`,
/// kept only inside the image.
fn predictions(
    camera: &PinholeCamera,
    pose: &PoseSE3,
    points: &[Option<PointId>],
    map: &WorldMap,
) -> Vec<Option<Vector2<f64>>> {
    points
        .iter()
        .map(|p| {
            let mp = map.points.get(&(*p)?)?;
            project(camera, pose, &mp.position).filter(|u| camera.contains(u))
        })
        .collect()
}

/// Tracks `frame` against the previous frame: features are matched with the
/// full matcher (or the windowed prior when `params.prior_matching`), lifted
/// to the previous frame's map points and the pose is optimised from the
/// constant-velocity prediction `predicted`, falling back to PnP-RANSAC on
/// the same matches when the prediction is too far off.
pub fn track_coarse(
    last: &Frame,
    predicted: &PoseSE3,
    frame: &Frame,
    map: &WorldMap,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<TrackResult, TrackError> {
    let matches = if params.prior_matching {
        let preds = predictions(&frame.camera, predicted, &last.points, map);
        match_with_prior(&last.features, &frame.features, &preds, params.prior_radius, params.min_similarity)
    } else {
        match_sets(matcher, &last.features, &frame.features, params.min_confidence)?
    };
    let points = lift(&matches, &last.points, map, frame.features.len());
    let lifted = points.iter().filter(|p| p.is_some()).count();
    if lifted < params.min_inliers {
        return Err(TrackError::TooFewMatches { got: lifted, needed: params.min_inliers });
    }
    let mut result = refine_frame_pose(frame, map, predicted, points.clone(), params);
    if result.inliers < params.min_inliers {
        // The motion prior was too far off for the local optimiser.
        result = solve_from_matches(frame, map, points, params)?;
    }
    result.matches = matches.len();
    Ok(result)
}

/// Full matching against keyframe `kf`, PnP-RANSAC on its map points and
/// motion-only refinement.
pub fn track_keyframe(
    kf: KeyFrameId,
    frame: &Frame,
    map: &WorldMap,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<TrackResult, TrackError> {
    let keyframe = map.keyframe(kf)?;
    let matches = match_sets(matcher, &keyframe.features, &frame.features, params.min_confidence)?;
    let points = lift(&matches, &keyframe.points, map, frame.features.len());
    let mut result = solve_from_matches(frame, map, points, params)?;
    result.matches = matches.len();
    Ok(result)
}

/// PnP-RANSAC over the associated map points of `frame`, then motion-only
/// refinement on the RANSAC inliers.
fn solve_from_matches(
    frame: &Frame,
    map: &WorldMap,
    points: Vec<Option<PointId>>,
    params: &TrackerParams,
) -> Result<TrackResult, TrackError> {
    let (index, corr) = correspondences(frame, map, &points, &params.ba);
    if corr.len() < params.min_inliers.max(4) {
        return Err(TrackError::TooFewMatches { got: corr.len(), needed: params.min_inliers.max(4) });
    }
    let pnp_input: Vec<_> = corr.iter().map(|(x, u, _)| (*x, *u)).collect();
    let ransac = RansacParams { min_inliers: params.min_inliers, ..params.ransac };
    let pnp = solve_pnp_ransac(&frame.camera, &pnp_input, &ransac).map_err(|e| match e {
        GeometryError::NoConsensus { inliers, needed } => TrackError::TooFewMatches { got: inliers, needed },
        GeometryError::InsufficientCorrespondences { got, needed } => TrackError::TooFewMatches { got, needed },
        other => TrackError::DegenerateGeometry(other.to_string()),
    })?;
    let mut kept = vec![None; frame.features.len()];
    for (k, &j) in index.iter().enumerate() {
        if pnp.inliers[k] {
            kept[j] = points[j];
        }
    }
    let result = refine_frame_pose(frame, map, &pnp.pose, kept, params);
    if result.inliers < params.min_inliers {
        return Err(TrackError::TooFewMatches { got: result.inliers, needed: params.min_inliers });
    }
    Ok(result)
}

/// Tracks `frame` against the reference keyframe.
pub fn track_reference(
    reference: Option<KeyFrameId>,
    frame: &Frame,
    map: &WorldMap,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<TrackResult, TrackError> {
    let kf = reference.filter(|k| map.keyframes.contains_key(k)).ok_or(TrackError::NoReference)?;
    track_keyframe(kf, frame, map, matcher, params)
}

/// Recovers the pose of a frame after tracking loss by querying the keyframe
/// database; the first candidate reaching the inlier quota wins.
pub fn relocalize(
    frame: &Frame,
    map: &WorldMap,
    db: &KeyframeDatabase,
    vocabulary: &VocabularyTree,
    matcher: &mut dyn MatcherBackend,
    params: &TrackerParams,
) -> Result<(KeyFrameId, TrackResult), TrackError> {
    let bow = quantize(vocabulary, &frame.features);
    let common = db.common_words(&bow);
    let max_common = common.values().copied().max().unwrap_or(0);
    let mut scored: Vec<(KeyFrameId, f64)> = common
        .iter()
        .filter(|(k, &c)| map.keyframes.contains_key(k) && c as f64 >= 0.8 * max_common as f64)
        .filter_map(|(&k, _)| db.similarity(&bow, k).map(|s| (k, s)))
        .filter(|(_, s)| *s >= params.reloc_min_score)
        .collect();
    if scored.is_empty() {
        return Err(TrackError::NoCandidate);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(params.reloc_candidates);
    for (kf, _) in scored {
        match track_keyframe(kf, frame, map, matcher, params) {
            Ok(result) => return Ok((kf, result)),
            Err(e) => log::debug!("relocalisation against keyframe {kf} failed: {e}"),
        }
    }
    Err(TrackError::NoConsensus)
}

/// Local keyframes of `reference`: itself and its best covisible neighbours.
pub fn local_keyframes(map: &WorldMap, reference: KeyFrameId, n: usize) -> Vec<KeyFrameId> {
    if !map.keyframes.contains_key(&reference) {
        return Vec::new();
    }
    let mut kfs = vec![reference];
    kfs.extend(map.best_covisible(reference, n));
    kfs
}

/// Projects the local map into `frame`, associates unmatched points by
/// windowed matching and re-optimises the pose over the enlarged set. The
/// input is returned unchanged when nothing new is found.
pub fn track_local_map(
    frame: &Frame,
    coarse: &TrackResult,
    reference: KeyFrameId,
    map: &WorldMap,
    params: &TrackerParams,
) -> TrackResult {
    let tracked: BTreeSet<PointId> = coarse.points.iter().flatten().copied().collect();
    let local: Vec<PointId> = map
        .points_of(&local_keyframes(map, reference, params.local_keyframes))
        .into_iter()
        .filter(|p| !tracked.contains(p))
        .collect();
    let cam = &frame.camera;
    let mut candidates = FeatureSet::empty(frame.features.dim, frame.features.width, frame.features.height);
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    for p in local {
        let mp = &map.points[&p];
        if mp.descriptor.len() != frame.features.dim {
            continue;
        }
        let Some(u) = project(cam, &coarse.pose, &mp.position).filter(|u| cam.contains(u)) else { continue };
        candidates.push(u, 1.0, &mp.descriptor);
        ids.push(p);
        preds.push(Some(u));
    }
    if ids.is_empty() {
        return coarse.clone();
    }
    let matches = match_with_prior(&candidates, &frame.features, &preds, params.local_radius, params.min_similarity);
    let mut points = coarse.points.clone();
    let mut added = 0;
    for &(i, j, _) in &matches.pairs {
        if points[j].is_none() {
            points[j] = Some(ids[i]);
            added += 1;
        }
    }
    if added == 0 {
        return coarse.clone();
    }
    let mut refined = refine_frame_pose(frame, map, &coarse.pose, points, params);
    refined.matches = coarse.matches;
    refined
}

/// Whether the tracked frame should become a keyframe.
pub fn decide_keyframe(params: &TrackerParams, tracked: usize, reference_tracked: usize, frames_since_keyframe: u64) -> bool {
    (tracked as f64) < params.keyframe_ratio * reference_tracked as f64 || frames_since_keyframe >= params.max_keyframe_gap
}

#[cfg(test)]
mod tests;
