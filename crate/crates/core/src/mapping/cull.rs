use std::collections::BTreeSet;

use super::{KeyFrameId, PointId, WorldMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CullParams {
    /// Keyframe insertions a new point survives regardless of support.
    pub grace_insertions: u64,
    /// Points seen by fewer keyframes are removed after the grace period.
    pub min_observations: usize,
    /// Fraction of a keyframe's points that must be seen elsewhere.
    pub redundancy: f64,
    /// Other keyframes that must observe a point for it to count as redundant.
    pub redundant_observers: usize,
}

impl Default for CullParams {
    fn default() -> Self {
        Self { grace_insertions: 3, min_observations: 3, redundancy: 0.9, redundant_observers: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CullReport {
    pub points: Vec<PointId>,
    pub keyframes: Vec<KeyFrameId>,
}

/// Fraction of the points of `kf` observed by at least `observers` other keyframes.
pub fn redundancy(map: &WorldMap, kf: KeyFrameId, observers: usize) -> f64 {
    let Some(k) = map.keyframes.get(&kf) else { return 0.0 };
    let mut total = 0usize;
    let mut covered = 0usize;
    for (_, p) in k.associated() {
        total += 1;
        if map.points[&p].obs() > observers {
            covered += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    }
}

/// Removes weakly supported points past their grace period, then keyframes
/// whose points are almost all seen by enough other keyframes. `protected`
/// keyframes, the origin and keyframes with loop edges are never removed.
pub fn cull(map: &mut WorldMap, protected: &BTreeSet<KeyFrameId>, params: &CullParams) -> CullReport {
    let mut report = CullReport::default();
    let weak: Vec<PointId> = map
        .points
        .values()
        .filter(|p| p.obs() < params.min_observations && map.insertions >= p.created_at + params.grace_insertions)
        .map(|p| p.id)
        .collect();
    for p in weak {
        map.remove_point(p);
        report.points.push(p);
    }
    let candidates: Vec<KeyFrameId> = map.keyframes.keys().copied().collect();
    for kf in candidates {
        if protected.contains(&kf) || map.origin == Some(kf) {
            continue;
        }
        let Some(k) = map.keyframes.get(&kf) else { continue };
        if !k.loop_edges.is_empty() || k.tracked_count() == 0 {
            continue;
        }
        if redundancy(map, kf, params.redundant_observers) >= params.redundancy {
            report.points.extend(map.remove_keyframe(kf));
            report.keyframes.push(kf);
        }
    }
    report
}
