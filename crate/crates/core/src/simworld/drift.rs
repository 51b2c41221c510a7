use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::PoseSim3;
use crate::mapping::{KeyFrameId, PointId, WorldMap};

/// Displaces the keyframes with id `≥ from` and their points by the world
/// similarity `drift`, as accumulated odometry error would. Points also seen
/// by earlier keyframes are split so that both fragments stay internally
/// consistent. Returns the replacement id of every split point.
pub fn inject_drift(map: &mut WorldMap, from: KeyFrameId, drift: &PoseSim3) -> BTreeMap<PointId, PointId> {
    let drifted: BTreeSet<KeyFrameId> = map.keyframes.keys().copied().filter(|&k| k >= from).collect();
    let undo = drift.inverse();
    let mut split = BTreeMap::new();
    let ids: Vec<PointId> = map.points.keys().copied().collect();
    for p in ids {
        let mp = &map.points[&p];
        let (inside, outside): (Vec<_>, Vec<_>) = mp.observations.iter().map(|(&k, &i)| (k, i)).partition(|(k, _)| drifted.contains(k));
        if inside.is_empty() {
            continue;
        }
        let moved = drift.transform(&mp.position);
        if outside.is_empty() {
            map.points.get_mut(&p).expect("live").position = moved;
            continue;
        }
        let reference = inside[0].0;
        let copy = map.add_point(moved, mp.descriptor.clone(), reference);
        for (k, i) in inside {
            map.remove_observation(p, k);
            map.add_observation(copy, k, i).expect("feature slot was just freed");
        }
        if let Some(mp) = map.points.get_mut(&p) {
            if drifted.contains(&mp.reference_kf) {
                mp.reference_kf = outside[0].0;
            }
        }
        split.insert(p, copy);
    }
    for k in &drifted {
        let kf = map.keyframes.get_mut(k).expect("live");
        kf.pose = kf.pose.to_sim3().compose(&undo).to_se3();
    }
    split
}
