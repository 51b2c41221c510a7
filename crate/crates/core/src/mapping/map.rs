use std::collections::{BTreeMap, BTreeSet};

use super::MappingError;
use crate::features::{dot, FeatureSet};
use crate::geometry::{Landmark3D, PinholeCamera, PoseSE3};
use crate::loopclosure::BowVector;

pub type KeyFrameId = u64;
pub type PointId = u64;

#[derive(Clone, Debug, PartialEq)]
pub struct KeyFrame {
    pub id: KeyFrameId,
    /// Id of the frame this keyframe was promoted from.
    pub frame_id: u64,
    pub timestamp: f64,
    /// World-to-camera.
    pub pose: PoseSE3,
    pub camera: PinholeCamera,
    pub features: FeatureSet,
    /// Map point associated with each feature.
    pub points: Vec<Option<PointId>>,
    pub bow: Option<BowVector>,
    /// Spanning-tree parent.
    pub parent: Option<KeyFrameId>,
    pub loop_edges: BTreeSet<KeyFrameId>,
}

impl KeyFrame {
    pub fn new(frame_id: u64, timestamp: f64, pose: PoseSE3, camera: PinholeCamera, features: FeatureSet) -> Self {
        let n = features.len();
        Self {
            id: 0,
            frame_id,
            timestamp,
            pose,
            camera,
            features,
            points: vec![None; n],
            bow: None,
            parent: None,
            loop_edges: BTreeSet::new(),
        }
    }

    pub fn associated(&self) -> impl Iterator<Item = (usize, PointId)> + '_ {
        self.points.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p)))
    }

    pub fn tracked_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    pub fn unassociated(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| self.points[i].is_none()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapPoint {
    pub id: PointId,
    pub position: Landmark3D,
    /// Observing keyframe to feature index.
    pub observations: BTreeMap<KeyFrameId, usize>,
    /// Representative unit descriptor.
    pub descriptor: Vec<f32>,
    /// Sum of the detector confidences of all observations.
    pub score_sum: f64,
    /// Keyframe insertion counter when the point was created.
    pub created_at: u64,
    pub reference_kf: KeyFrameId,
}

impl MapPoint {
    pub fn obs(&self) -> usize {
        self.observations.len()
    }

    /// `f_sp`: mean detector confidence over the observations.
    pub fn score(&self) -> f64 {
        if self.observations.is_empty() {
            0.0
        } else {
            (self.score_sum / self.observations.len() as f64).clamp(0.0, 1.0)
        }
    }
}

/// Keyframes, map points and the covisibility graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldMap {
    pub keyframes: BTreeMap<KeyFrameId, KeyFrame>,
    pub points: BTreeMap<PointId, MapPoint>,
    covisibility: BTreeMap<KeyFrameId, BTreeMap<KeyFrameId, usize>>,
    next_keyframe: KeyFrameId,
    next_point: PointId,
    /// Number of keyframes inserted so far.
    pub insertions: u64,
    /// First keyframe; fixes the gauge.
    pub origin: Option<KeyFrameId>,
    /// Removed keyframes: reference keyframe and pose relative to it.
    pub retired: BTreeMap<KeyFrameId, (KeyFrameId, PoseSE3)>,
}

impl WorldMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `kf` under a fresh id; associations are added separately.
    pub fn add_keyframe(&mut self, mut kf: KeyFrame) -> KeyFrameId {
        let id = self.next_keyframe;
        self.next_keyframe += 1;
        kf.id = id;
        kf.points = vec![None; kf.features.len()];
        self.keyframes.insert(id, kf);
        self.covisibility.insert(id, BTreeMap::new());
        self.insertions += 1;
        if self.origin.is_none() {
            self.origin = Some(id);
        }
        id
    }

    pub fn add_point(&mut self, position: Landmark3D, descriptor: Vec<f32>, reference_kf: KeyFrameId) -> PointId {
        let id = self.next_point;
        self.next_point += 1;
        self.points.insert(
            id,
            MapPoint {
                id,
                position,
                observations: BTreeMap::new(),
                descriptor,
                score_sum: 0.0,
                created_at: self.insertions,
                reference_kf,
            },
        );
        id
    }

    pub fn keyframe(&self, id: KeyFrameId) -> Result<&KeyFrame, MappingError> {
        self.keyframes.get(&id).ok_or(MappingError::UnknownKeyFrame(id))
    }

    pub fn keyframe_mut(&mut self, id: KeyFrameId) -> Result<&mut KeyFrame, MappingError> {
        self.keyframes.get_mut(&id).ok_or(MappingError::UnknownKeyFrame(id))
    }

    pub fn point(&self, id: PointId) -> Result<&MapPoint, MappingError> {
        self.points.get(&id).ok_or(MappingError::UnknownPoint(id))
    }

    /// Links feature `feature` of `kf` to `point`, updating covisibility.
    pub fn add_observation(&mut self, point: PointId, kf: KeyFrameId, feature: usize) -> Result<(), MappingError> {
        let keyframe = self.keyframes.get(&kf).ok_or(MappingError::UnknownKeyFrame(kf))?;
        let mp = self.points.get(&point).ok_or(MappingError::UnknownPoint(point))?;
        if feature >= keyframe.points.len() || keyframe.points[feature].is_some() || mp.observations.contains_key(&kf) {
            return Err(MappingError::Association { kf, feature, point });
        }
        let score = keyframe.features.scores[feature];
        let others: Vec<KeyFrameId> = mp.observations.keys().copied().collect();
        for other in others {
            self.bump_edge(kf, other, 1);
        }
        let mp = self.points.get_mut(&point).expect("checked");
        mp.observations.insert(kf, feature);
        mp.score_sum += score;
        self.keyframes.get_mut(&kf).expect("checked").points[feature] = Some(point);
        Ok(())
    }

    pub fn remove_observation(&mut self, point: PointId, kf: KeyFrameId) {
        let Some(mp) = self.points.get_mut(&point) else { return };
        let Some(feature) = mp.observations.remove(&kf) else { return };
        let others: Vec<KeyFrameId> = mp.observations.keys().copied().collect();
        if let Some(keyframe) = self.keyframes.get_mut(&kf) {
            mp.score_sum -= keyframe.features.scores[feature];
            keyframe.points[feature] = None;
        }
        if mp.observations.is_empty() {
            mp.score_sum = 0.0;
        }
        for other in others {
            self.bump_edge(kf, other, -1);
        }
    }

    pub fn remove_point(&mut self, point: PointId) {
        let kfs: Vec<KeyFrameId> =
            self.points.get(&point).map(|p| p.observations.keys().copied().collect()).unwrap_or_default();
        for kf in kfs {
            self.remove_observation(point, kf);
        }
        self.points.remove(&point);
    }

    /// Removes a keyframe and its observations; orphaned points are dropped
    /// and spanning-tree children are handed to its parent.
    pub fn remove_keyframe(&mut self, kf: KeyFrameId) -> Vec<PointId> {
        let Some(keyframe) = self.keyframes.get(&kf) else { return Vec::new() };
        let observed: Vec<PointId> = keyframe.associated().map(|(_, p)| p).collect();
        let parent = keyframe.parent;
        let loops = keyframe.loop_edges.clone();
        for &p in &observed {
            self.remove_observation(p, kf);
        }
        let mut removed = Vec::new();
        for p in observed {
            if self.points.get(&p).is_some_and(|mp| mp.observations.is_empty()) {
                self.points.remove(&p);
                removed.push(p);
            }
        }
        let new_parent = parent.filter(|p| self.keyframes.contains_key(p));
        for other in self.keyframes.values_mut() {
            if other.parent == Some(kf) {
                other.parent = new_parent.filter(|&np| np != other.id);
            }
            other.loop_edges.remove(&kf);
        }
        if let Some(np) = new_parent {
            for l in loops {
                if l != np {
                    self.keyframes.get_mut(&np).expect("exists").loop_edges.insert(l);
                    if let Some(other) = self.keyframes.get_mut(&l) {
                        other.loop_edges.insert(np);
                    }
                }
            }
        }
        if self.origin == Some(kf) {
            self.origin = self.keyframes.keys().copied().find(|&id| id != kf);
        }
        let removed_kf = self.keyframes.remove(&kf).expect("checked above");
        if let Some(anchor) = new_parent.or(self.origin) {
            let relative = removed_kf.pose.compose(&self.keyframes[&anchor].pose.inverse());
            self.retired.insert(kf, (anchor, relative));
        }
        if let Some(edges) = self.covisibility.remove(&kf) {
            for other in edges.keys() {
                if let Some(e) = self.covisibility.get_mut(other) {
                    e.remove(&kf);
                }
            }
        }
        // Orphaned children take the strongest covisible keyframe as parent.
        let orphans: Vec<KeyFrameId> = self
            .keyframes
            .values()
            .filter(|k| k.parent.is_none() && Some(k.id) != self.origin)
            .map(|k| k.id)
            .collect();
        for o in orphans {
            let best = self
                .covisible(o, 1)
                .into_iter()
                .map(|(id, _)| id)
                .chain(self.origin)
                .find(|&b| !self.descends_from(b, o));
            self.keyframes.get_mut(&o).expect("exists").parent = best;
        }
        removed
    }

    /// Whether `ancestor` lies on the parent chain of `kf` (or is `kf`).
    pub fn descends_from(&self, kf: KeyFrameId, ancestor: KeyFrameId) -> bool {
        let mut cur = Some(kf);
        let mut steps = 0;
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            steps += 1;
            if steps > self.keyframes.len() {
                return false;
            }
            cur = self.keyframes.get(&c).and_then(|k| k.parent);
        }
        false
    }

    /// Moves every observation of `drop` onto `keep` and deletes `drop`.
    pub fn merge_points(&mut self, keep: PointId, drop: PointId) -> Result<(), MappingError> {
        if keep == drop {
            return Ok(());
        }
        let obs: Vec<(KeyFrameId, usize)> =
            self.point(drop)?.observations.iter().map(|(&k, &f)| (k, f)).collect();
        self.point(keep)?;
        self.remove_point(drop);
        for (kf, feature) in obs {
            let already = self.points[&keep].observations.contains_key(&kf);
            if !already && self.keyframes[&kf].points[feature].is_none() {
                self.add_observation(keep, kf, feature)?;
            }
        }
        Ok(())
    }

    fn bump_edge(&mut self, a: KeyFrameId, b: KeyFrameId, delta: i64) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            let edges = self.covisibility.entry(x).or_default();
            let w = edges.entry(y).or_insert(0);
            let next = *w as i64 + delta;
            if next <= 0 {
                edges.remove(&y);
            } else {
                *w = next as usize;
            }
        }
    }

    pub fn covisibility_weight(&self, a: KeyFrameId, b: KeyFrameId) -> usize {
        self.covisibility.get(&a).and_then(|e| e.get(&b)).copied().unwrap_or(0)
    }

    /// Keyframes sharing at least `min_weight` points with `kf`, strongest first.
    pub fn covisible(&self, kf: KeyFrameId, min_weight: usize) -> Vec<(KeyFrameId, usize)> {
        let mut out: Vec<(KeyFrameId, usize)> = self
            .covisibility
            .get(&kf)
            .map(|e| e.iter().filter(|(_, &w)| w >= min_weight).map(|(&k, &w)| (k, w)).collect())
            .unwrap_or_default();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// The `n` strongest covisible keyframes.
    pub fn best_covisible(&self, kf: KeyFrameId, n: usize) -> Vec<KeyFrameId> {
        self.covisible(kf, 1).into_iter().take(n).map(|(k, _)| k).collect()
    }

    /// Covisibility weights recounted from the observations.
    pub fn recount_covisibility(&self) -> BTreeMap<KeyFrameId, BTreeMap<KeyFrameId, usize>> {
        let mut out: BTreeMap<KeyFrameId, BTreeMap<KeyFrameId, usize>> =
            self.keyframes.keys().map(|&k| (k, BTreeMap::new())).collect();
        for mp in self.points.values() {
            let kfs: Vec<KeyFrameId> = mp.observations.keys().copied().collect();
            for (i, &a) in kfs.iter().enumerate() {
                for &b in &kfs[i + 1..] {
                    *out.get_mut(&a).expect("live keyframe").entry(b).or_default() += 1;
                    *out.get_mut(&b).expect("live keyframe").entry(a).or_default() += 1;
                }
            }
        }
        out
    }

    /// Verifies covisibility weights and that every association is mirrored.
    pub fn check_integrity(&self) -> Result<(), String> {
        if self.recount_covisibility() != self.covisibility {
            return Err("covisibility weights differ from recount".into());
        }
        for kf in self.keyframes.values() {
            for (i, p) in kf.associated() {
                let mp = self.points.get(&p).ok_or(format!("keyframe {} references dead point {p}", kf.id))?;
                if mp.observations.get(&kf.id) != Some(&i) {
                    return Err(format!("keyframe {} feature {i} -> point {p} not mirrored", kf.id));
                }
            }
            if let Some(parent) = kf.parent {
                if !self.keyframes.contains_key(&parent) {
                    return Err(format!("keyframe {} has dead parent {parent}", kf.id));
                }
                if self.descends_from(parent, kf.id) {
                    return Err(format!("keyframe {} lies on a parent cycle", kf.id));
                }
            }
        }
        for mp in self.points.values() {
            if mp.observations.is_empty() {
                return Err(format!("point {} has no observations", mp.id));
            }
            if !mp.position.iter().all(|v| v.is_finite()) {
                return Err(format!("point {} is not finite", mp.id));
            }
            for (&kf, &i) in &mp.observations {
                let k = self.keyframes.get(&kf).ok_or(format!("point {} observed by dead keyframe {kf}", mp.id))?;
                if k.points.get(i).copied().flatten() != Some(mp.id) {
                    return Err(format!("point {} observation ({kf}, {i}) not mirrored", mp.id));
                }
            }
        }
        Ok(())
    }

    /// Re-selects the representative descriptor as the observation with the
    /// highest summed similarity to the others.
    pub fn update_descriptor(&mut self, point: PointId) {
        let Some(mp) = self.points.get(&point) else { return };
        let descs: Vec<&[f32]> =
            mp.observations.iter().map(|(kf, &i)| self.keyframes[kf].features.descriptor(i)).collect();
        if descs.is_empty() {
            return;
        }
        let mut best = (f32::NEG_INFINITY, 0);
        for (i, a) in descs.iter().enumerate() {
            let s: f32 = descs.iter().map(|b| dot(a, b)).sum();
            if s > best.0 {
                best = (s, i);
            }
        }
        let d = descs[best.1].to_vec();
        self.points.get_mut(&point).expect("exists").descriptor = d;
    }

    /// Median camera-frame depth of the points seen by `kf`.
    pub fn median_depth(&self, kf: KeyFrameId) -> Option<f64> {
        let k = self.keyframes.get(&kf)?;
        let mut depths: Vec<f64> = k
            .associated()
            .filter_map(|(_, p)| self.points.get(&p))
            .map(|mp| k.pose.transform(&mp.position).z)
            .collect();
        if depths.is_empty() {
            return None;
        }
        depths.sort_by(f64::total_cmp);
        Some(depths[depths.len() / 2])
    }

    /// Points observed by any of `kfs`, ascending.
    pub fn points_of(&self, kfs: &[KeyFrameId]) -> Vec<PointId> {
        let mut set = BTreeSet::new();
        for kf in kfs {
            if let Some(k) = self.keyframes.get(kf) {
                set.extend(k.associated().map(|(_, p)| p));
            }
        }
        set.into_iter().collect()
    }

    /// Pose of a live keyframe, or of a removed one through its reference chain.
    pub fn resolve_pose(&self, kf: KeyFrameId) -> Option<PoseSE3> {
        let mut relative = PoseSE3::identity();
        let mut cur = kf;
        for _ in 0..=self.retired.len() {
            if let Some(k) = self.keyframes.get(&cur) {
                return Some(relative.compose(&k.pose));
            }
            let (anchor, rel) = self.retired.get(&cur)?;
            relative = relative.compose(rel);
            cur = *anchor;
        }
        None
    }

    /// Spanning-tree children of `kf`.
    pub fn children(&self, kf: KeyFrameId) -> Vec<KeyFrameId> {
        self.keyframes.values().filter(|k| k.parent == Some(kf)).map(|k| k.id).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};
    use proptest::prelude::*;

    pub fn camera() -> PinholeCamera {
        PinholeCamera::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap()
    }

    pub fn features(n: usize) -> FeatureSet {
        let mut f = FeatureSet::empty(4, 800, 600);
        for i in 0..n {
            f.push(Vector2::new(i as f64, 0.0), 0.5 + 0.01 * i as f64, &[1.0, i as f32, 0.0, 0.5]);
        }
        f
    }

    #[test]
    fn covisibility_tracks_observations() {
        let mut map = WorldMap::new();
        let a = map.add_keyframe(KeyFrame::new(0, 0.0, PoseSE3::identity(), camera(), features(5)));
        let b = map.add_keyframe(KeyFrame::new(1, 0.1, PoseSE3::identity(), camera(), features(5)));
        for i in 0..3 {
            let p = map.add_point(Vector3::new(0.0, 0.0, 1.0 + i as f64), vec![1.0, 0.0, 0.0, 0.0], a);
            map.add_observation(p, a, i).unwrap();
            map.add_observation(p, b, i).unwrap();
        }
        assert_eq!(map.covisibility_weight(a, b), 3);
        map.check_integrity().unwrap();
        let p0 = map.keyframes[&a].points[0].unwrap();
        map.remove_point(p0);
        assert_eq!(map.covisibility_weight(a, b), 2);
        map.check_integrity().unwrap();
        assert!(map.add_observation(map.keyframes[&a].points[1].unwrap(), a, 4).is_err());
    }

    #[test]
    fn score_is_mean_confidence() {
        let mut map = WorldMap::new();
        let a = map.add_keyframe(KeyFrame::new(0, 0.0, PoseSE3::identity(), camera(), features(3)));
        let b = map.add_keyframe(KeyFrame::new(1, 0.1, PoseSE3::identity(), camera(), features(3)));
        let p = map.add_point(Vector3::new(0.0, 0.0, 1.0), vec![1.0, 0.0, 0.0, 0.0], a);
        map.add_observation(p, a, 0).unwrap();
        map.add_observation(p, b, 2).unwrap();
        assert!((map.points[&p].score() - 0.51).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_equal_recount_after_random_edits(
            ops in prop::collection::vec((0u8..5, 0usize..6, 0usize..6, 0usize..8), 1..80)
        ) {
            let mut map = WorldMap::new();
            for i in 0..6 {
                map.add_keyframe(KeyFrame::new(i, i as f64, PoseSE3::identity(), camera(), features(8)));
            }
            for (op, a, b, f) in ops {
                let kfs: Vec<KeyFrameId> = map.keyframes.keys().copied().collect();
                if kfs.is_empty() {
                    break;
                }
                let ka = kfs[a % kfs.len()];
                let kb = kfs[b % kfs.len()];
                match op {
                    0 | 1 => {
                        let p = map.add_point(Vector3::new(0.0, 0.0, 2.0), vec![1.0, 0.0, 0.0, 0.0], ka);
                        let _ = map.add_observation(p, ka, f);
                        let _ = map.add_observation(p, kb, f);
                        if map.points[&p].observations.is_empty() {
                            map.remove_point(p);
                        }
                    }
                    2 => {
                        if let Some(&p) = map.points.keys().nth(f % map.points.len().max(1)) {
                            map.remove_point(p);
                        }
                    }
                    3 => {
                        let ps: Vec<PointId> = map.points.keys().copied().collect();
                        if ps.len() >= 2 {
                            map.merge_points(ps[f % ps.len()], ps[(f + 1) % ps.len()]).unwrap();
                        }
                    }
                    _ => {
                        if kfs.len() > 2 {
                            map.remove_keyframe(ka);
                        }
                    }
                }
                prop_assert!(map.check_integrity().is_ok(), "{:?}", map.check_integrity());
            }
        }
    }
}
