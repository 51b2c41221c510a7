use std::collections::BTreeMap;

use super::{
    decide_keyframe, initialize_monocular, initialize_stereo, relocalize, track_coarse, track_local_map, track_reference,
    Frame, Initialization, TrackError, TrackResult, TrackerParams, TrackingMode,
};
use crate::features::{AdaptiveThresholdState, FeatureSet};
use crate::geometry::PoseSE3;
use crate::loopclosure::{KeyframeDatabase, VocabularyTree};
use crate::mapping::{KeyFrame, KeyFrameId, PointId, WorldMap};
use crate::matching::MatcherBackend;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    pub mode: TrackingMode,
    /// Last successfully tracked frame.
    pub last_frame: Option<Frame>,
    pub reference_keyframe: Option<KeyFrameId>,
    /// Pose of the reference keyframe when `last_frame` was tracked.
    pub reference_pose: PoseSE3,
    /// Relative motion between the last two tracked frames.
    pub velocity: Option<PoseSE3>,
    pub threshold_state: AdaptiveThresholdState,
    /// Consecutive failed frames.
    pub failures: usize,
    pub frames_since_keyframe: u64,
    /// First frame of a pending monocular initialisation.
    pub init_reference: Option<Frame>,
    /// A keyframe was handed to mapping and not yet acknowledged.
    pub keyframe_pending: bool,
}

impl TrackerState {
    pub fn new(threshold_state: AdaptiveThresholdState) -> Self {
        Self {
            mode: TrackingMode::Uninitialized,
            last_frame: None,
            reference_keyframe: None,
            reference_pose: PoseSE3::identity(),
            velocity: None,
            threshold_state,
            failures: 0,
            frames_since_keyframe: 0,
            init_reference: None,
            keyframe_pending: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackedBy {
    Initialization,
    Coarse,
    Reference,
    Relocalization,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameStatus {
    Tracked(TrackedBy),
    /// Kept as the first frame of a future initialisation.
    Waiting,
    Failed(TrackError),
}

/// Keyframe handed from tracking to mapping.
#[derive(Clone, Debug)]
pub struct NewKeyFrame {
    pub keyframe: KeyFrame,
    /// Feature index and map point of every tracked feature.
    pub associations: Vec<(usize, PointId)>,
    pub parent: Option<KeyFrameId>,
    pub right: Option<FeatureSet>,
}

#[derive(Debug)]
pub struct FrameOutcome {
    pub frame_id: u64,
    pub timestamp: f64,
    pub status: FrameStatus,
    pub pose: Option<PoseSE3>,
    pub reference: Option<KeyFrameId>,
    pub matches: usize,
    pub inliers: usize,
    pub keyframe: Option<NewKeyFrame>,
    /// New map to install; only on the initialising frame.
    pub initialization: Option<Initialization>,
    pub mode: TrackingMode,
}

/// Sequential tracking stage.
pub struct Tracker {
    pub params: TrackerParams,
    pub state: TrackerState,
    matcher: Box<dyn MatcherBackend>,
}

/// Nearest live keyframe along the retirement chain of `kf`.
fn live_anchor(map: &WorldMap, mut kf: KeyFrameId) -> Option<KeyFrameId> {
    for _ in 0..=map.retired.len() {
        if map.keyframes.contains_key(&kf) {
            return Some(kf);
        }
        kf = map.retired.get(&kf)?.0;
    }
    None
}

impl Tracker {
    pub fn new(params: TrackerParams, threshold_state: AdaptiveThresholdState, matcher: Box<dyn MatcherBackend>) -> Self {
        Self { params, state: TrackerState::new(threshold_state), matcher }
    }

    pub fn mode(&self) -> TrackingMode {
        self.state.mode
    }

    /// Mapping stored the keyframe spawned from `frame_id` as `kf`.
    pub fn keyframe_inserted(&mut self, frame_id: u64, kf: KeyFrameId, map: &WorldMap) {
        self.state.keyframe_pending = false;
        let newer = self.state.last_frame.as_ref().is_some_and(|f| f.id >= frame_id);
        if newer {
            if let Some(pose) = map.resolve_pose(kf) {
                self.sync_with_map(map);
                self.state.reference_keyframe = Some(kf);
                self.state.reference_pose = pose;
            }
        }
    }

    /// Mapping dropped a keyframe before inserting it.
    pub fn keyframe_rejected(&mut self) {
        self.state.keyframe_pending = false;
    }

    /// Rewrites the last frame's associations after points were split or merged.
    pub fn remap_points(&mut self, remap: &BTreeMap<PointId, PointId>) {
        if let Some(last) = self.state.last_frame.as_mut() {
            for p in last.points.iter_mut().flatten() {
                if let Some(&q) = remap.get(p) {
                    *p = q;
                }
            }
        }
    }

    /// Carries the last pose along with any change of its reference keyframe
    /// (adjustment, loop correction, culling).
    fn sync_with_map(&mut self, map: &WorldMap) {
        let Some(reference) = self.state.reference_keyframe else { return };
        let Some(anchor) = live_anchor(map, reference) else { return };
        let Some(current) = map.resolve_pose(reference) else { return };
        if let Some(pose) = self.state.last_frame.as_mut().and_then(|f| f.pose.as_mut()) {
            let relative = pose.compose(&self.state.reference_pose.inverse());
            *pose = relative.compose(&current);
        }
        self.state.reference_keyframe = Some(anchor);
        self.state.reference_pose = map.keyframes[&anchor].pose;
    }

    fn predicted_pose(&self, frame_id: u64) -> Option<PoseSE3> {
        let last = self.state.last_frame.as_ref()?;
        let mut pose = last.pose?;
        if let Some(v) = self.state.velocity {
            for _ in 0..frame_id.saturating_sub(last.id).max(1) {
                pose = v.compose(&pose);
            }
        }
        Some(pose)
    }

    fn outcome(&self, frame: &Frame, status: FrameStatus) -> FrameOutcome {
        FrameOutcome {
            frame_id: frame.id,
            timestamp: frame.timestamp,
            status,
            pose: None,
            reference: self.state.reference_keyframe,
            matches: 0,
            inliers: 0,
            keyframe: None,
            initialization: None,
            mode: self.state.mode,
        }
    }

    /// Runs one frame through the state machine. `places` enables
    /// relocalisation.
    pub fn process(
        &mut self,
        frame: Frame,
        map: &WorldMap,
        places: Option<(&KeyframeDatabase, &VocabularyTree)>,
    ) -> FrameOutcome {
        match self.state.mode {
            TrackingMode::Uninitialized => self.initialize(frame),
            TrackingMode::Tracking => {
                self.sync_with_map(map);
                let Some(predicted) = self.predicted_pose(frame.id) else {
                    return self.fail(frame, TrackError::NoReference);
                };
                let last = self.state.last_frame.as_ref().expect("tracking has a last frame");
                let tracked = match track_coarse(last, &predicted, &frame, map, self.matcher.as_mut(), &self.params) {
                    Ok(r) => Ok((r, TrackedBy::Coarse)),
                    Err(coarse) => {
                        log::debug!("frame {}: coarse tracking failed ({coarse}), trying the reference", frame.id);
                        track_reference(self.state.reference_keyframe, &frame, map, self.matcher.as_mut(), &self.params)
                            .map(|r| (r, TrackedBy::Reference))
                    }
                };
                match tracked {
                    Ok((result, by)) => {
                        let reference = self.state.reference_keyframe.expect("tracking has a reference");
                        self.succeed(frame, result, reference, by, map)
                    }
                    Err(e) => self.fail(frame, e),
                }
            }
            TrackingMode::Lost => {
                let Some((db, vocabulary)) = places else {
                    return self.fail(frame, TrackError::NoCandidate);
                };
                match relocalize(&frame, map, db, vocabulary, self.matcher.as_mut(), &self.params) {
                    Ok((kf, result)) => {
                        self.state.reference_keyframe = Some(kf);
                        self.state.reference_pose = map.keyframes[&kf].pose;
                        self.state.velocity = None;
                        self.state.mode = TrackingMode::Tracking;
                        self.succeed(frame, result, kf, TrackedBy::Relocalization, map)
                    }
                    Err(e) => self.fail(frame, e),
                }
            }
        }
    }

    fn initialize(&mut self, frame: Frame) -> FrameOutcome {
        let attempt = if self.params.stereo_baseline > 0.0 {
            initialize_stereo(&frame, self.matcher.as_mut(), &self.params)
        } else {
            match self.state.init_reference.as_ref() {
                None => Err(TrackError::InsufficientMatches { got: 0, needed: self.params.min_init_features }),
                Some(reference) => initialize_monocular(reference, &frame, self.matcher.as_mut(), &self.params),
            }
        };
        match attempt {
            Ok(init) => {
                let mut frame = frame;
                frame.pose = Some(init.pose);
                frame.points = init.points.clone();
                let reference = *init.keyframes.last().expect("initialisation creates keyframes");
                self.state.mode = TrackingMode::Tracking;
                self.state.reference_keyframe = Some(reference);
                self.state.reference_pose = init.map.keyframes[&reference].pose;
                self.state.velocity = None;
                self.state.failures = 0;
                self.state.frames_since_keyframe = 0;
                self.state.init_reference = None;
                self.state.threshold_state.last_match_count = init.matches;
                let mut out = self.outcome(&frame, FrameStatus::Tracked(TrackedBy::Initialization));
                out.pose = frame.pose;
                out.matches = init.matches;
                out.inliers = frame.tracked_count();
                out.initialization = Some(init);
                self.state.last_frame = Some(frame);
                out
            }
            Err(e) => {
                let replace = match (&e, self.state.init_reference.as_ref()) {
                    (_, None) => true,
                    (TrackError::InsufficientMatches { .. }, _) => true,
                    (_, Some(r)) => frame.id.saturating_sub(r.id) > self.params.init_max_gap,
                };
                let stereo = self.params.stereo_baseline > 0.0;
                let status = if !stereo && self.state.init_reference.is_none() {
                    FrameStatus::Waiting
                } else {
                    FrameStatus::Failed(e)
                };
                let out = self.outcome(&frame, status);
                if !stereo && replace && frame.features.len() >= self.params.min_init_features {
                    self.state.init_reference = Some(frame);
                }
                out
            }
        }
    }

    fn fail(&mut self, frame: Frame, error: TrackError) -> FrameOutcome {
        self.state.failures += 1;
        if self.state.mode == TrackingMode::Tracking && self.state.failures >= self.params.lost_after {
            log::info!("frame {}: tracking lost ({error})", frame.id);
            self.state.mode = TrackingMode::Lost;
            self.state.velocity = None;
        }
        self.outcome(&frame, FrameStatus::Failed(error))
    }

    fn succeed(&mut self, mut frame: Frame, result: TrackResult, reference: KeyFrameId, by: TrackedBy, map: &WorldMap) -> FrameOutcome {
        let refined = track_local_map(&frame, &result, reference, map, &self.params);
        let matches = result.matches;
        frame.pose = Some(refined.pose);
        frame.points = refined.points;
        if let Some(last) = self.state.last_frame.as_ref() {
            let consecutive = last.id + 1 == frame.id && by != TrackedBy::Relocalization;
            self.state.velocity = match (consecutive, last.pose) {
                (true, Some(prev)) => Some(refined.pose.compose(&prev.inverse())),
                _ => None,
            };
        }
        self.state.failures = 0;
        self.state.frames_since_keyframe += 1;
        self.state.threshold_state.last_match_count = matches;
        let tracked = frame.tracked_count();
        let reference_tracked = map.keyframes.get(&reference).map_or(0, |k| k.tracked_count());
        let mut out = self.outcome(&frame, FrameStatus::Tracked(by));
        out.pose = frame.pose;
        out.matches = matches;
        out.inliers = tracked;
        out.reference = Some(reference);
        let spawn = !self.state.keyframe_pending
            && tracked >= self.params.min_inliers
            && decide_keyframe(&self.params, tracked, reference_tracked, self.state.frames_since_keyframe);
        if spawn {
            let pose = refined.pose;
            let keyframe = KeyFrame::new(frame.id, frame.timestamp, pose, frame.camera, frame.features.clone());
            let associations = frame.points.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect();
            out.keyframe = Some(NewKeyFrame { keyframe, associations, parent: Some(reference), right: frame.right.clone() });
            self.state.keyframe_pending = true;
            self.state.frames_since_keyframe = 0;
        }
        self.state.last_frame = Some(frame);
        out
    }
}
