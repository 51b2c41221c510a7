use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::{PoseSE3, PoseSim3};
use crate::loopclosure::{
    compute_sim3, correct_loop, detect_candidates, quantize, verify_covisible, ConsistencyGate, CorrectParams, DetectParams,
    KeyframeDatabase, LoopCandidate, LoopError, Sim3Params, VerifyParams, VocabularyTree,
};
use crate::mapping::{
    create_map_points, cull, fuse_neighbors, local_bundle_adjust, BaParams, CreateParams, CullParams, FuseParams, FuseStats,
    KeyFrameId, MappingError, PointId, WorldMap,
};
use crate::matching::MatcherBackend;
use crate::simworld::inject_drift;
use crate::tracking::{stereo_points, NewKeyFrame, TrackerParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappingParams {
    pub create: CreateParams,
    pub fuse: FuseParams,
    /// Covisible keyframes receiving the new keyframe's points.
    pub fuse_neighbors: usize,
    pub ba: BaParams,
    pub cull: CullParams,
    /// Inject `drift` once the map has seen this many keyframe insertions.
    pub drift_at: Option<u64>,
    pub drift: PoseSim3,
}

/// What one keyframe insertion did to the map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MappingOutcome {
    pub keyframe: KeyFrameId,
    pub frame_id: u64,
    pub created: usize,
    pub stereo: usize,
    pub fused: FuseStats,
    pub culled_points: usize,
    pub culled_keyframes: Vec<KeyFrameId>,
    /// Point splits made by drift injection.
    pub remap: Option<BTreeMap<PointId, PointId>>,
}

/// Adds a keyframe's bag-of-words vector to the database.
pub fn register_keyframe(map: &mut WorldMap, db: &mut KeyframeDatabase, vocabulary: Option<&VocabularyTree>, kf: KeyFrameId) {
    let (Some(vocabulary), Some(k)) = (vocabulary, map.keyframes.get_mut(&kf)) else { return };
    let bow = quantize(vocabulary, &k.features);
    k.bow = Some(bow.clone());
    db.add(kf, bow);
}

/// Local mapping: inserts keyframes, triangulates, fuses, adjusts and culls.
pub struct MappingStage {
    pub params: MappingParams,
    pub tracker: TrackerParams,
    matcher: Box<dyn MatcherBackend>,
    drift_done: bool,
}

impl MappingStage {
    pub fn new(params: MappingParams, tracker: TrackerParams, matcher: Box<dyn MatcherBackend>) -> Self {
        Self { params, tracker, matcher, drift_done: false }
    }

    pub fn process(
        &mut self,
        map: &mut WorldMap,
        db: &mut KeyframeDatabase,
        vocabulary: Option<&VocabularyTree>,
        new: NewKeyFrame,
    ) -> MappingOutcome {
        let frame_id = new.keyframe.frame_id;
        let id = map.add_keyframe(new.keyframe);
        let parent = new.parent.and_then(|p| live_or_latest(map, p, id));
        map.keyframes.get_mut(&id).expect("just added").parent = parent;
        for (i, p) in new.associations {
            if map.points.contains_key(&p) && map.add_observation(p, id, i).is_ok() {
                map.update_descriptor(p);
            }
        }
        let mut out = MappingOutcome { keyframe: id, frame_id, ..Default::default() };

        if let Some(right) = &new.right {
            let kf = &map.keyframes[&id];
            let result = stereo_points(
                &kf.features,
                &kf.points,
                right,
                &kf.camera,
                &kf.pose,
                self.tracker.stereo_baseline,
                self.matcher.as_mut(),
                &self.tracker,
            );
            match result {
                Ok(points) => {
                    out.stereo = points.len();
                    for (i, x) in points {
                        let descriptor = map.keyframes[&id].features.descriptor(i).to_vec();
                        let p = map.add_point(x, descriptor, id);
                        map.add_observation(p, id, i).expect("free stereo slot");
                    }
                }
                Err(e) => log::debug!("keyframe {id}: stereo matching failed ({e})"),
            }
        }

        register_keyframe(map, db, vocabulary, id);
        match create_map_points(map, id, self.matcher.as_mut(), &self.params.create) {
            Ok(created) => out.created = created.len(),
            Err(e) => log::debug!("keyframe {id}: point creation failed ({e})"),
        }
        match fuse_neighbors(map, id, self.params.fuse_neighbors, &self.params.fuse) {
            Ok(stats) => out.fused = stats,
            Err(e) => log::debug!("keyframe {id}: fusion failed ({e})"),
        }
        match local_bundle_adjust(map, id, &self.params.ba) {
            Ok(_) => {}
            Err(MappingError::RankDeficient(why)) => log::debug!("keyframe {id}: local adjustment skipped ({why})"),
            Err(e) => log::warn!("keyframe {id}: local adjustment failed ({e})"),
        }
        let mut protected: BTreeSet<KeyFrameId> = [id].into_iter().collect();
        protected.extend(map.origin);
        let report = cull(map, &protected, &self.params.cull);
        for k in &report.keyframes {
            db.remove(*k);
        }
        out.culled_points = report.points.len();
        out.culled_keyframes = report.keyframes;

        if let Some(at) = self.params.drift_at {
            if !self.drift_done && map.insertions >= at {
                log::info!("injecting drift at keyframe {id}");
                out.remap = Some(inject_drift(map, id, &self.params.drift));
                self.drift_done = true;
            }
        }
        out
    }
}

/// `kf` if still live, otherwise the newest live keyframe older than `before`.
fn live_or_latest(map: &WorldMap, kf: KeyFrameId, before: KeyFrameId) -> Option<KeyFrameId> {
    if map.keyframes.contains_key(&kf) {
        return Some(kf);
    }
    map.keyframes.range(..before).next_back().map(|(&k, _)| k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopParams {
    pub enabled: bool,
    pub detect: DetectParams,
    pub consistency: usize,
    pub sim3: Sim3Params,
    pub verify: VerifyParams,
    pub correct: CorrectParams,
    /// Candidates must be at least this many keyframes older than the query.
    pub min_gap: u64,
    /// Keyframes the map must hold before loops are searched.
    pub min_keyframes: usize,
    /// Keyframes after an accepted loop during which detection pauses.
    pub cooldown: u64,
}

/// One loop hypothesis that reached geometric verification.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopEvent {
    pub query: KeyFrameId,
    pub query_frame: u64,
    pub candidate: KeyFrameId,
    pub candidate_frame: u64,
    /// Ranked candidate groups of the detection round.
    pub candidates: Vec<LoopCandidate>,
    /// Camera of the candidate to camera of the query.
    pub t_am: PoseSim3,
    pub inliers: usize,
    /// Matches found across the query's covisible keyframes.
    pub verified: usize,
    pub accepted: bool,
    pub fused: FuseStats,
    /// Keyframe poses (frame id, world-to-camera) before and after correction.
    pub before: Vec<(u64, PoseSE3)>,
    pub after: Vec<(u64, PoseSE3)>,
}

/// A gated detection waiting for geometric verification.
#[derive(Clone, Debug)]
pub struct LoopHypothesis {
    pub query: KeyFrameId,
    pub candidates: Vec<LoopCandidate>,
    pub consistent: Vec<LoopCandidate>,
}

fn keyframe_poses(map: &WorldMap) -> Vec<(u64, PoseSE3)> {
    map.keyframes.values().map(|k| (k.frame_id, k.pose)).collect()
}

/// Place recognition plus loop verification and correction.
pub struct LoopStage {
    pub params: LoopParams,
    matcher: Box<dyn MatcherBackend>,
    gate: ConsistencyGate,
    last_loop: Option<KeyFrameId>,
}

impl LoopStage {
    pub fn new(params: LoopParams, matcher: Box<dyn MatcherBackend>) -> Self {
        Self { gate: ConsistencyGate::new(params.consistency), params, matcher, last_loop: None }
    }

    /// Candidate retrieval and the temporal consistency gate; reads the map only.
    pub fn detect(&mut self, map: &WorldMap, db: &KeyframeDatabase, query: KeyFrameId) -> Option<LoopHypothesis> {
        if !self.params.enabled || !map.keyframes.contains_key(&query) || db.vector(query).is_none() {
            return None;
        }
        if map.keyframes.len() < self.params.min_keyframes {
            return None;
        }
        if self.last_loop.is_some_and(|l| query < l + self.params.cooldown) {
            return None;
        }
        let mut exclude: BTreeSet<KeyFrameId> = map.covisible(query, 1).into_iter().map(|(k, _)| k).collect();
        exclude.insert(query);
        exclude.extend(map.keyframes.range(query.saturating_sub(self.params.min_gap)..).map(|(&k, _)| k));
        let candidates = match detect_candidates(db, map, query, &exclude, &self.params.detect) {
            Ok(c) => c,
            Err(LoopError::NoCandidate) => Vec::new(),
            Err(e) => {
                log::debug!("keyframe {query}: loop detection failed ({e})");
                Vec::new()
            }
        };
        let consistent = self.gate.update(&candidates, |k| map.best_covisible(k, self.params.detect.group_size));
        if consistent.is_empty() {
            return None;
        }
        Some(LoopHypothesis { query, candidates, consistent })
    }

    /// Similarity estimation, covisible verification and, on success, loop
    /// correction. Needs exclusive access to the map.
    pub fn close(&mut self, map: &mut WorldMap, hypothesis: LoopHypothesis) -> Vec<LoopEvent> {
        let query = hypothesis.query;
        let mut events = Vec::new();
        if !map.keyframes.contains_key(&query) {
            return events;
        }
        for candidate in &hypothesis.consistent {
            let km = candidate.keyframe;
            if !map.keyframes.contains_key(&km) {
                continue;
            }
            let estimate = match compute_sim3(map, query, km, self.matcher.as_mut(), &self.params.sim3) {
                Ok(e) => e,
                Err(e) => {
                    log::debug!("loop {query}-{km}: similarity rejected ({e})");
                    continue;
                }
            };
            let verification = match verify_covisible(map, query, km, &estimate.t_am, &self.params.verify) {
                Ok(v) => v,
                Err(e) => {
                    log::debug!("loop {query}-{km}: verification failed ({e})");
                    continue;
                }
            };
            let mut event = LoopEvent {
                query,
                query_frame: map.keyframes[&query].frame_id,
                candidate: km,
                candidate_frame: map.keyframes[&km].frame_id,
                candidates: hypothesis.candidates.clone(),
                t_am: estimate.t_am,
                inliers: estimate.inliers.len(),
                verified: verification.total,
                accepted: verification.passed,
                fused: FuseStats::default(),
                before: Vec::new(),
                after: Vec::new(),
            };
            if verification.passed {
                log::info!(
                    "loop closed between keyframes {query} and {km} (scale {:.4}, {} inliers)",
                    estimate.t_am.scale,
                    event.inliers
                );
                event.before = keyframe_poses(map);
                let correction = correct_loop(map, query, km, &estimate.t_am, &self.params.correct);
                event.fused = correction.fused;
                event.after = keyframe_poses(map);
                self.last_loop = Some(query);
                self.gate.reset();
                events.push(event);
                break;
            }
            events.push(event);
        }
        events
    }
}
