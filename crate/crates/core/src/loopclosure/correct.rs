use std::collections::{BTreeMap, BTreeSet};

use super::{PoseGraph, PoseGraphEdge, PoseGraphReport};
use crate::geometry::PoseSim3;
use crate::mapping::{fuse_into, global_bundle_adjust, BaParams, BaReport, FuseParams, FuseStats, KeyFrameId, PointId, WorldMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectParams {
    pub fuse: FuseParams,
    /// Covisibility weight for an edge to enter the pose graph.
    pub min_edge_weight: usize,
    pub pose_graph_iterations: usize,
    /// LM iterations of the final global adjustment; zero skips it.
    pub global_ba_iterations: usize,
    pub ba: BaParams,
    /// Keep scale fixed in the pose graph.
    pub fix_scale: bool,
}

impl Default for CorrectParams {
    fn default() -> Self {
        Self {
            fuse: FuseParams::default(),
            min_edge_weight: 30,
            pose_graph_iterations: 20,
            global_ba_iterations: 10,
            ba: BaParams::default(),
            fix_scale: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopCorrection {
    /// `K_a` and the covisible keyframes moved with it.
    pub connected: Vec<KeyFrameId>,
    pub fused: FuseStats,
    pub pose_graph: PoseGraphReport,
    pub global_ba: Option<BaReport>,
}

/// Reference frame used to carry a point along with keyframe corrections.
fn anchor_of(map: &WorldMap, p: PointId, within: &BTreeSet<KeyFrameId>) -> Option<KeyFrameId> {
    let mp = &map.points[&p];
    if within.contains(&mp.reference_kf) && mp.observations.contains_key(&mp.reference_kf) {
        return Some(mp.reference_kf);
    }
    mp.observations.keys().copied().find(|k| within.contains(k))
}

/// Moves each keyframe in `targets` to its new similarity and carries every
/// point anchored there along.
fn apply_similarities(
    map: &mut WorldMap,
    old: &BTreeMap<KeyFrameId, PoseSim3>,
    new: &BTreeMap<KeyFrameId, PoseSim3>,
    points: &[PointId],
) {
    let targets: BTreeSet<KeyFrameId> = new.keys().copied().collect();
    for &p in points {
        if !map.points.contains_key(&p) {
            continue;
        }
        let Some(r) = anchor_of(map, p, &targets) else { continue };
        let x = map.points[&p].position;
        let moved = new[&r].inverse().transform(&old[&r].transform(&x));
        map.points.get_mut(&p).expect("live").position = moved;
    }
    for (k, s) in new {
        map.keyframes.get_mut(k).expect("live").pose = s.to_se3();
    }
}

/// Closes the loop `K_a ↔ K_m` given `T_am` (camera of `K_m` to camera of
/// `K_a`): moves `K_a`'s covisible neighbourhood onto the loop side, fuses
/// duplicated points, optimises the similarity pose graph and finishes with a
/// bounded global bundle adjustment.
pub fn correct_loop(
    map: &mut WorldMap,
    ka: KeyFrameId,
    km: KeyFrameId,
    t_am: &PoseSim3,
    params: &CorrectParams,
) -> LoopCorrection {
    let mut connected: BTreeSet<KeyFrameId> = map.covisible(ka, 1).into_iter().map(|(k, _)| k).collect();
    connected.insert(ka);
    let current: BTreeMap<KeyFrameId, PoseSim3> = map.keyframes.iter().map(|(&k, kf)| (k, kf.pose.to_sim3())).collect();
    let s_aw = t_am.compose(&current[&km]);
    let a_inv = current[&ka].inverse();
    let uncorrected: BTreeMap<KeyFrameId, PoseSim3> = connected.iter().map(|k| (*k, current[k])).collect();
    let corrected: BTreeMap<KeyFrameId, PoseSim3> =
        connected.iter().map(|k| (*k, current[k].compose(&a_inv).compose(&s_aw))).collect();
    let moved_points = map.points_of(&connected.iter().copied().collect::<Vec<_>>());
    apply_similarities(map, &uncorrected, &corrected, &moved_points);

    let mut loop_side: BTreeSet<KeyFrameId> = map.covisible(km, 1).into_iter().map(|(k, _)| k).collect();
    loop_side.insert(km);
    loop_side.retain(|k| !connected.contains(k));
    let loop_points = map.points_of(&loop_side.iter().copied().collect::<Vec<_>>());
    let before: BTreeMap<KeyFrameId, BTreeSet<KeyFrameId>> =
        connected.iter().map(|&k| (k, map.covisible(k, 1).into_iter().map(|(n, _)| n).collect())).collect();
    let mut fused = FuseStats::default();
    for &k in &connected {
        fused += fuse_into(map, k, &loop_points, &params.fuse).unwrap_or_default();
    }
    if let Some(a) = map.keyframes.get_mut(&ka) {
        a.loop_edges.insert(km);
    }
    if let Some(m) = map.keyframes.get_mut(&km) {
        m.loop_edges.insert(ka);
    }

    let mut graph = PoseGraph { fix_scale: params.fix_scale, ..Default::default() };
    for (&k, _) in &map.keyframes {
        graph.vertices.insert(k, corrected.get(&k).copied().unwrap_or(current[&k]));
    }
    if let Some(origin) = map.origin {
        graph.fixed.insert(origin);
    }
    let reference = |k: &KeyFrameId| uncorrected.get(k).copied().unwrap_or(current[k]);
    let mut new_links: BTreeSet<(KeyFrameId, KeyFrameId)> = BTreeSet::new();
    for &k in &connected {
        for (n, _) in map.covisible(k, 1) {
            if !connected.contains(&n) && !before[&k].contains(&n) {
                new_links.insert((k.min(n), k.max(n)));
            }
        }
    }
    new_links.insert((ka.min(km), ka.max(km)));
    let mut seen: BTreeSet<(KeyFrameId, KeyFrameId)> = new_links.clone();
    for (i, j) in &new_links {
        graph.edges.push(PoseGraphEdge::from_poses(*i, &graph.vertices[i], *j, &graph.vertices[j]));
    }
    for (&k, kf) in &map.keyframes {
        let mut neighbours: Vec<KeyFrameId> = kf.parent.into_iter().chain(kf.loop_edges.iter().copied()).collect();
        neighbours.extend(map.covisible(k, params.min_edge_weight).into_iter().map(|(n, _)| n));
        for n in neighbours {
            let key = (k.min(n), k.max(n));
            if n == k || !map.keyframes.contains_key(&n) || !seen.insert(key) {
                continue;
            }
            graph.edges.push(PoseGraphEdge::from_poses(key.0, &reference(&key.0), key.1, &reference(&key.1)));
        }
    }
    let initial = graph.vertices.clone();
    let pose_graph = graph.optimize(params.pose_graph_iterations);
    let all_points: Vec<PointId> = map.points.keys().copied().collect();
    apply_similarities(map, &initial, &graph.vertices, &all_points);

    let global_ba = if params.global_ba_iterations > 0 {
        global_bundle_adjust(map, &params.ba, params.global_ba_iterations).ok()
    } else {
        None
    };
    LoopCorrection { connected: connected.into_iter().collect(), fused, pose_graph, global_ba }
}
