//! Orchestration of tracking, local mapping and loop closure over a dataset,
//! either as three concurrent stages or round-robin in a single thread.

mod report;
mod stages;

pub use report::{Category, FrameRecord, RunReport, Stage, Timings, HISTOGRAM_EDGES_MS};
pub use stages::{
    register_keyframe, LoopEvent, LoopHypothesis, LoopParams, LoopStage, MappingOutcome, MappingParams, MappingStage,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::config::{BackendKind, RunConfig, SensorMode};
use crate::dataset::{DatasetError, DatasetFrame, DatasetReader, FrameSource};
use crate::evaluation::{evaluate_ate, AlignMode, TrajectoryEstimate, DEFAULT_MAX_DT};
use crate::features::{extract, AdaptiveThresholdState, DetectorBackend, FeatureError, FeatureParams, FrameInput};
use crate::geometry::{PinholeCamera, PoseSE3, PoseSim3};
use crate::loopclosure::{
    binarize, train_vocabulary_documents, CorrectParams, DetectParams, KeyframeDatabase, Sim3Params, VerifyParams,
    VocabularyTree,
};
use crate::mapping::{BaParams, CreateParams, CullParams, FuseParams, KeyFrameId, LmParams, MapSnapshot, PointId, WorldMap};
use crate::matching::{BruteForceMatcher, MatcherBackend};
use crate::simworld::{CameraSide, SyntheticDetector};
use crate::tracking::{Frame, FrameOutcome, FrameStatus, NewKeyFrame, TrackedBy, Tracker, TrackerParams, TrackingMode};

/// Frames sampled from the sequence to train a vocabulary when none is given.
const VOCABULARY_FRAMES: usize = 60;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("initialisation failed within {frames} frames")]
    InitializationFailed { frames: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Every stage's parameters, resolved from a configuration and a dataset.
#[derive(Clone, Debug)]
pub struct PipelineParams {
    pub camera: PinholeCamera,
    pub stereo: bool,
    pub deterministic: bool,
    pub features: FeatureParams,
    pub threshold: AdaptiveThresholdState,
    pub tracker: TrackerParams,
    pub mapping: MappingParams,
    pub loops: LoopParams,
    pub init_frame_budget: usize,
}

impl PipelineParams {
    pub fn resolve(config: &RunConfig, reader: &DatasetReader) -> Result<Self, PipelineError> {
        config.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let camera = config.camera.or(reader.camera).ok_or(DatasetError::NoCamera)?;
        let stereo = config.mode == SensorMode::Stereo;
        let baseline = if stereo {
            if !reader.has_stereo() {
                return Err(PipelineError::Config("stereo mode needs a dataset with a right camera".into()));
            }
            match reader.stereo_baseline {
                Some(b) if b > 0.0 => b,
                _ => return Err(PipelineError::Config("stereo baseline unknown".into())),
            }
        } else {
            0.0
        };
        let f = &config.features;
        let threshold = AdaptiveThresholdState::new(f.mu1, f.mu2, f.resize_width, f.resize_height)?;
        let features = FeatureParams { nms_radius: f.nms_radius, subpixel: f.subpixel, fixed_threshold: f.fixed_threshold };
        let min_confidence = config.matcher.min_confidence;
        let m = &config.mapping;
        let ba = BaParams {
            window: m.window,
            lambda: m.lambda,
            adaptive_weights: !config.ablation.lc,
            lm: LmParams { max_iterations: m.iterations, ..LmParams::default() },
            ..BaParams::default()
        };
        let t = &config.tracker;
        let defaults = TrackerParams::default();
        let tracker = TrackerParams {
            min_init_features: t.min_init_features,
            min_init_points: t.min_init_points,
            init_parallax_deg: t.init_parallax_deg,
            min_inliers: t.min_inliers,
            min_confidence,
            ransac: crate::geometry::RansacParams { seed: config.seed, ..defaults.ransac },
            ba,
            local_keyframes: t.local_keyframes,
            local_radius: t.local_radius,
            min_similarity: t.min_similarity,
            prior_matching: config.ablation.mt,
            prior_radius: t.prior_radius,
            keyframe_ratio: t.keyframe_ratio,
            max_keyframe_gap: t.max_keyframe_gap,
            lost_after: t.lost_after,
            reloc_candidates: t.reloc_candidates,
            reloc_min_score: t.reloc_min_score,
            stereo_baseline: baseline,
            ..defaults
        };
        let d = &config.debug;
        let drift = PoseSim3::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), d.drift_yaw_deg.to_radians()),
            Vector3::from(d.drift_translation),
            d.drift_scale,
        );
        let mapping = MappingParams {
            create: CreateParams {
                neighbors: m.neighbors,
                min_baseline_ratio: m.min_baseline_ratio,
                min_confidence,
                guided: config.ablation.lm,
                ..CreateParams::default()
            },
            fuse: FuseParams { radius: m.fuse_radius, ..FuseParams::default() },
            fuse_neighbors: m.neighbors,
            ba,
            cull: CullParams { redundancy: m.cull_redundancy, ..CullParams::default() },
            drift_at: d.drift_at_keyframe.map(|k| k as u64),
            drift,
        };
        let l = &config.loop_closure;
        let loops = LoopParams {
            enabled: l.enabled,
            detect: DetectParams { top_groups: l.top_groups, min_similarity: l.min_similarity, ..DetectParams::default() },
            consistency: l.consistency,
            sim3: Sim3Params {
                min_inliers: l.sim3_min_inliers,
                with_scale: !stereo,
                min_confidence,
                seed: config.seed,
                ..Sim3Params::default()
            },
            verify: VerifyParams { threshold: l.verify_threshold, ..VerifyParams::default() },
            correct: CorrectParams {
                fuse: FuseParams { radius: m.fuse_radius, ..FuseParams::default() },
                global_ba_iterations: l.global_ba_iterations,
                ba,
                fix_scale: stereo,
                ..CorrectParams::default()
            },
            min_gap: l.min_gap,
            min_keyframes: 10,
            cooldown: 10,
        };
        Ok(Self {
            camera,
            stereo,
            deterministic: config.deterministic,
            features,
            threshold,
            tracker,
            mapping,
            loops,
            init_frame_budget: t.init_frame_budget,
        })
    }
}

fn detector(config: &RunConfig, reader: &DatasetReader, side: CameraSide) -> Result<Box<dyn DetectorBackend>, PipelineError> {
    match config.backend.kind {
        BackendKind::Synthetic => {
            let scene = reader
                .scene
                .clone()
                .ok_or_else(|| PipelineError::Backend("the synthetic backend needs a synthetic dataset".into()))?;
            Ok(Box::new(SyntheticDetector::new(scene, side)))
        }
        BackendKind::Neural => neural_detector(config),
    }
}

#[cfg(feature = "onnx")]
fn neural_detector(config: &RunConfig) -> Result<Box<dyn DetectorBackend>, PipelineError> {
    let path = config.backend.detector_model.as_ref().ok_or_else(|| PipelineError::Backend("no detector model".into()))?;
    Ok(Box::new(crate::features::NeuralDetector::load(path)?))
}

#[cfg(not(feature = "onnx"))]
fn neural_detector(_: &RunConfig) -> Result<Box<dyn DetectorBackend>, PipelineError> {
    Err(PipelineError::Backend("built without the `onnx` feature".into()))
}

/// A fresh matcher for one stage.
pub fn matcher(config: &RunConfig) -> Result<Box<dyn MatcherBackend>, PipelineError> {
    match config.backend.kind {
        BackendKind::Synthetic => Ok(Box::new(BruteForceMatcher)),
        BackendKind::Neural => neural_matcher(config),
    }
}

#[cfg(feature = "onnx")]
fn neural_matcher(config: &RunConfig) -> Result<Box<dyn MatcherBackend>, PipelineError> {
    let path = config.backend.matcher_model.as_ref().ok_or_else(|| PipelineError::Backend("no matcher model".into()))?;
    crate::matching::NeuralMatcher::load(path)
        .map(|m| Box::new(m) as Box<dyn MatcherBackend>)
        .map_err(|e| PipelineError::Backend(e.to_string()))
}

#[cfg(not(feature = "onnx"))]
fn neural_matcher(_: &RunConfig) -> Result<Box<dyn MatcherBackend>, PipelineError> {
    Err(PipelineError::Backend("built without the `onnx` feature".into()))
}

fn frame_input<'a>(source: &FrameSource, image: &'a mut Option<crate::features::GrayImage>) -> Result<FrameInput<'a>, PipelineError> {
    match source {
        FrameSource::Synthetic(i) => Ok(FrameInput::Synthetic(*i)),
        FrameSource::Image(_) => {
            *image = Some(DatasetReader::load_image(source)?);
            Ok(FrameInput::Image(image.as_ref().expect("just loaded")))
        }
    }
}

/// Loads the configured vocabulary or trains one on frames sampled evenly
/// from the sequence.
pub fn prepare_vocabulary(
    config: &RunConfig,
    reader: &DatasetReader,
    params: &PipelineParams,
) -> Result<VocabularyTree, PipelineError> {
    let l = &config.loop_closure;
    if let Some(path) = &l.vocabulary {
        let file = fs::File::open(path).map_err(|e| PipelineError::Vocabulary(format!("{}: {e}", path.display())))?;
        return VocabularyTree::read(BufReader::new(file)).map_err(|e| PipelineError::Vocabulary(e.to_string()));
    }
    let mut backend = detector(config, reader, CameraSide::Left)?;
    let step = reader.len().div_ceil(VOCABULARY_FRAMES).max(1);
    let mut documents = Vec::new();
    for df in reader.frames.iter().step_by(step) {
        let mut image = None;
        let input = frame_input(&df.left, &mut image)?;
        let features = extract(backend.as_mut(), input, &params.camera, &params.threshold, &params.features)?;
        documents.push((0..features.len()).map(|i| binarize(features.descriptor(i))).collect::<Vec<_>>());
    }
    train_vocabulary_documents(&documents, l.k, l.depth, config.seed).map_err(|e| PipelineError::Vocabulary(e.to_string()))
}

/// Trajectory sample stored relative to a keyframe so that later map
/// corrections carry it along.
#[derive(Clone, Copy, Debug)]
struct Anchored {
    timestamp: f64,
    anchor: KeyFrameId,
    relative: PoseSE3,
}

/// Notifications from the back-end stages to the tracker.
#[derive(Clone, Debug)]
enum MapEvent {
    Inserted { frame_id: u64, keyframe: KeyFrameId },
    Remap(BTreeMap<PointId, PointId>),
}

/// Feature extraction and tracking plus the bookkeeping of their results.
struct FrontEnd {
    tracker: Tracker,
    left: Box<dyn DetectorBackend>,
    right: Option<Box<dyn DetectorBackend>>,
    camera: PinholeCamera,
    features: FeatureParams,
    init_frame_budget: usize,
    trajectory: BTreeMap<u64, Anchored>,
    report: RunReport,
    previous_mode: TrackingMode,
}

impl FrontEnd {
    fn new(config: &RunConfig, reader: &DatasetReader, params: &PipelineParams) -> Result<Self, PipelineError> {
        let right = if params.stereo { Some(detector(config, reader, CameraSide::Right)?) } else { None };
        Ok(Self {
            tracker: Tracker::new(params.tracker, params.threshold, matcher(config)?),
            left: detector(config, reader, CameraSide::Left)?,
            right,
            camera: params.camera,
            features: params.features,
            init_frame_budget: params.init_frame_budget,
            trajectory: BTreeMap::new(),
            report: RunReport::default(),
            previous_mode: TrackingMode::Uninitialized,
        })
    }

    fn extract(&mut self, index: usize, df: &DatasetFrame) -> Result<Frame, PipelineError> {
        let start = Instant::now();
        let state = self.tracker.state.threshold_state;
        let mut image = None;
        let input = frame_input(&df.left, &mut image)?;
        let features = extract(self.left.as_mut(), input, &self.camera, &state, &self.features)?;
        let mut frame = Frame::new(index as u64, df.timestamp(), features, self.camera);
        if let (Some(backend), Some(source)) = (self.right.as_mut(), df.right.as_ref()) {
            let mut image = None;
            let input = frame_input(source, &mut image)?;
            frame.right = Some(extract(backend.as_mut(), input, &self.camera, &state, &self.features)?);
        }
        self.report.timings.record(Category::Fe, start.elapsed().as_secs_f64() * 1e3);
        Ok(frame)
    }

    fn track(&mut self, frame: Frame, map: &WorldMap, db: &KeyframeDatabase, vocabulary: Option<&VocabularyTree>) -> FrameOutcome {
        let places = vocabulary.map(|v| (db, v));
        let features = frame.features.len();
        let outcome = self.tracker.process(frame, map, places);
        let tracked = matches!(outcome.status, FrameStatus::Tracked(_));
        self.report.frames.push(FrameRecord {
            frame_id: outcome.frame_id,
            features,
            matches: outcome.matches,
            inliers: outcome.inliers,
            tracked,
        });
        outcome
    }

    /// Fails the run once initialisation has used up its frame budget.
    fn check_budget(&self) -> Result<(), PipelineError> {
        if self.report.initialized_at.is_none() && self.report.frames.len() >= self.init_frame_budget {
            return Err(PipelineError::InitializationFailed { frames: self.report.frames.len() });
        }
        Ok(())
    }

    /// Records a tracked pose against its reference keyframe in `map` (the
    /// map after any initialisation was installed).
    fn record(&mut self, outcome: &FrameOutcome, initialized: &[KeyFrameId], map: &WorldMap) {
        match &outcome.status {
            FrameStatus::Tracked(by) => {
                if *by == TrackedBy::Initialization {
                    self.report.initialized_at = Some(outcome.frame_id);
                    for &k in initialized {
                        let kf = &map.keyframes[&k];
                        let entry = Anchored { timestamp: kf.timestamp, anchor: k, relative: PoseSE3::identity() };
                        self.trajectory.insert(kf.frame_id, entry);
                    }
                } else if let (Some(pose), Some(reference)) = (outcome.pose, outcome.reference) {
                    if let Some(anchor_pose) = map.resolve_pose(reference) {
                        let entry = Anchored {
                            timestamp: outcome.timestamp,
                            anchor: reference,
                            relative: pose.compose(&anchor_pose.inverse()),
                        };
                        self.trajectory.insert(outcome.frame_id, entry);
                    }
                }
                if *by == TrackedBy::Relocalization {
                    self.report.relocalizations += 1;
                }
            }
            FrameStatus::Failed(e) => self.report.failures.push((outcome.frame_id, e.to_string())),
            FrameStatus::Waiting => {}
        }
        if self.previous_mode == TrackingMode::Tracking && outcome.mode == TrackingMode::Lost {
            self.report.lost_events += 1;
        }
        self.previous_mode = outcome.mode;
    }

    fn apply(&mut self, event: MapEvent, map: &WorldMap) {
        match event {
            MapEvent::Inserted { frame_id, keyframe } => {
                self.report.keyframes_inserted += 1;
                self.tracker.keyframe_inserted(frame_id, keyframe, map);
                if let Some(entry) = self.trajectory.get_mut(&frame_id) {
                    if map.keyframes.contains_key(&keyframe) {
                        entry.anchor = keyframe;
                        entry.relative = PoseSE3::identity();
                    }
                }
            }
            MapEvent::Remap(remap) => self.tracker.remap_points(&remap),
        }
    }
}

fn mapping_events(out: &MappingOutcome) -> Vec<MapEvent> {
    let mut events = vec![MapEvent::Inserted { frame_id: out.frame_id, keyframe: out.keyframe }];
    if let Some(remap) = &out.remap {
        events.push(MapEvent::Remap(remap.clone()));
    }
    events
}

fn install(
    map: &mut WorldMap,
    db: &mut KeyframeDatabase,
    vocabulary: Option<&VocabularyTree>,
    outcome: &mut FrameOutcome,
) -> Vec<KeyFrameId> {
    let Some(init) = outcome.initialization.take() else { return Vec::new() };
    *map = init.map;
    *db = KeyframeDatabase::new();
    for &k in &init.keyframes {
        register_keyframe(map, db, vocabulary, k);
    }
    init.keyframes
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn ms_between(start: Instant, end: Instant) -> f64 {
    (end - start).as_secs_f64() * 1e3
}

/// Result of a run: camera-to-world trajectory, final map and report.
#[derive(Debug)]
pub struct RunOutput {
    pub trajectory: TrajectoryEstimate,
    pub snapshot: MapSnapshot,
    pub report: RunReport,
    pub map: WorldMap,
}

impl RunOutput {
    /// Writes `trajectory.txt`, `map.txt` and `report.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        let mut t = BufWriter::new(fs::File::create(dir.join("trajectory.txt"))?);
        self.trajectory.write(&mut t).map_err(|e| PipelineError::Io(std::io::Error::other(e.to_string())))?;
        t.flush()?;
        let mut m = BufWriter::new(fs::File::create(dir.join("map.txt"))?);
        self.snapshot.write(&mut m)?;
        m.flush()?;
        let mut r = BufWriter::new(fs::File::create(dir.join("report.txt"))?);
        self.report.write(&mut r)?;
        r.flush()?;
        Ok(())
    }
}

/// Runs the full system over `reader`.
pub fn run_slam(config: &RunConfig, reader: &DatasetReader) -> Result<RunOutput, PipelineError> {
    let params = PipelineParams::resolve(config, reader)?;
    let vocabulary = if params.loops.enabled || config.loop_closure.vocabulary.is_some() {
        Some(prepare_vocabulary(config, reader, &params)?)
    } else {
        None
    };
    run_with_vocabulary(config, reader, &params, vocabulary.map(Arc::new))
}

/// [`run_slam`] with an explicit vocabulary; `None` disables relocalisation
/// and loop detection.
pub fn run_with_vocabulary(
    config: &RunConfig,
    reader: &DatasetReader,
    params: &PipelineParams,
    vocabulary: Option<Arc<VocabularyTree>>,
) -> Result<RunOutput, PipelineError> {
    let front = FrontEnd::new(config, reader, params)?;
    let mapping = MappingStage::new(params.mapping, params.tracker, matcher(config)?);
    let looper = LoopStage::new(params.loops, matcher(config)?);
    let (front, map, loops, timings) = if params.deterministic {
        run_round_robin(reader, front, mapping, looper, vocabulary.as_deref())?
    } else {
        run_concurrent(reader, front, mapping, looper, vocabulary.clone())?
    };
    Ok(finish(front, map, loops, timings, reader, params, vocabulary.as_deref()))
}

type Finished = (FrontEnd, WorldMap, Vec<LoopEvent>, Timings);

fn run_round_robin(
    reader: &DatasetReader,
    mut front: FrontEnd,
    mut mapping: MappingStage,
    mut looper: LoopStage,
    vocabulary: Option<&VocabularyTree>,
) -> Result<Finished, PipelineError> {
    let mut map = WorldMap::new();
    let mut db = KeyframeDatabase::new();
    let mut loops = Vec::new();
    let mut timings = Timings::default();
    for (index, df) in reader.frames.iter().enumerate() {
        let wall = Instant::now();
        let frame = front.extract(index, df)?;
        let start = Instant::now();
        let mut outcome = front.track(frame, &map, &db, vocabulary);
        let initialized = install(&mut map, &mut db, vocabulary, &mut outcome);
        front.record(&outcome, &initialized, &map);
        let keyframe = outcome.keyframe.take();
        front.report.timings.record(Category::Tt, ms_since(start));
        timings.add_wall(Stage::Tracking, ms_since(wall));
        front.check_budget()?;

        let Some(new) = keyframe else { continue };
        let start = Instant::now();
        let out = mapping.process(&mut map, &mut db, vocabulary, new);
        let lm = ms_since(start);
        timings.record(Category::Lm, lm);
        timings.add_wall(Stage::Mapping, lm);
        for e in mapping_events(&out) {
            front.apply(e, &map);
        }

        let start = Instant::now();
        let hypothesis = looper.detect(&map, &db, out.keyframe);
        let detected = Instant::now();
        timings.record(Category::Pr, ms_between(start, detected));
        let mut end = detected;
        if let Some(h) = hypothesis {
            loops.extend(looper.close(&mut map, h));
            end = Instant::now();
            timings.record(Category::Lc, ms_between(detected, end));
        }
        timings.add_wall(Stage::Loop, ms_between(start, end));
    }
    Ok((front, map, loops, timings))
}

fn run_concurrent(
    reader: &DatasetReader,
    mut front: FrontEnd,
    mut mapping: MappingStage,
    mut looper: LoopStage,
    vocabulary: Option<Arc<VocabularyTree>>,
) -> Result<Finished, PipelineError> {
    let map = RwLock::new(WorldMap::new());
    let db = RwLock::new(KeyframeDatabase::new());
    let events: Mutex<Vec<MapEvent>> = Mutex::new(Vec::new());
    let (keyframe_tx, keyframe_rx) = mpsc::channel::<NewKeyFrame>();
    let (loop_tx, loop_rx) = mpsc::channel::<KeyFrameId>();
    let vocab = vocabulary.as_deref();

    let result = std::thread::scope(|s| {
        let mapping_thread = s.spawn(|| {
            let mut timings = Timings::default();
            for new in keyframe_rx {
                let wall = Instant::now();
                let out = {
                    let mut m = map.write().expect("map lock");
                    let mut d = db.write().expect("database lock");
                    let start = Instant::now();
                    let out = mapping.process(&mut m, &mut d, vocab, new);
                    timings.record(Category::Lm, ms_since(start));
                    out
                };
                events.lock().expect("event lock").extend(mapping_events(&out));
                let _ = loop_tx.send(out.keyframe);
                timings.add_wall(Stage::Mapping, ms_since(wall));
            }
            drop(loop_tx);
            timings
        });
        let loop_thread = s.spawn(|| {
            let mut timings = Timings::default();
            let mut loops = Vec::new();
            for query in loop_rx {
                let start = Instant::now();
                let hypothesis = {
                    let m = map.read().expect("map lock");
                    let d = db.read().expect("database lock");
                    looper.detect(&m, &d, query)
                };
                let detected = Instant::now();
                timings.record(Category::Pr, ms_between(start, detected));
                let mut end = detected;
                if let Some(h) = hypothesis {
                    let mut m = map.write().expect("map lock");
                    loops.extend(looper.close(&mut m, h));
                    end = Instant::now();
                    timings.record(Category::Lc, ms_between(detected, end));
                }
                timings.add_wall(Stage::Loop, ms_between(start, end));
            }
            (timings, loops)
        });

        let mut timings = Timings::default();
        let mut failure = None;
        for (index, df) in reader.frames.iter().enumerate() {
            let wall = Instant::now();
            let frame = match front.extract(index, df) {
                Ok(f) => f,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            let start = Instant::now();
            let pending: Vec<MapEvent> = std::mem::take(&mut *events.lock().expect("event lock"));
            let mut outcome = {
                let m = map.read().expect("map lock");
                for e in pending {
                    front.apply(e, &m);
                }
                let d = db.read().expect("database lock");
                front.track(frame, &m, &d, vocab)
            };
            let initialized = if outcome.initialization.is_some() {
                let mut m = map.write().expect("map lock");
                let mut d = db.write().expect("database lock");
                install(&mut m, &mut d, vocab, &mut outcome)
            } else {
                Vec::new()
            };
            front.record(&outcome, &initialized, &map.read().expect("map lock"));
            if let Some(new) = outcome.keyframe.take() {
                let _ = keyframe_tx.send(new);
            }
            front.report.timings.record(Category::Tt, ms_since(start));
            timings.add_wall(Stage::Tracking, ms_since(wall));
            if let Err(e) = front.check_budget() {
                failure = Some(e);
                break;
            }
        }
        drop(keyframe_tx);
        let mapping_timings = mapping_thread.join().expect("mapping thread panicked");
        let (loop_timings, loops) = loop_thread.join().expect("loop thread panicked");
        timings.merge(mapping_timings);
        timings.merge(loop_timings);
        match failure {
            Some(e) => Err(e),
            None => Ok((timings, loops)),
        }
    });
    let (timings, loops) = result?;
    let map = map.into_inner().expect("map lock");
    for e in events.into_inner().expect("event lock") {
        front.apply(e, &map);
    }
    Ok((front, map, loops, timings))
}

fn finish(
    front: FrontEnd,
    map: WorldMap,
    loops: Vec<LoopEvent>,
    timings: Timings,
    reader: &DatasetReader,
    params: &PipelineParams,
    vocabulary: Option<&VocabularyTree>,
) -> RunOutput {
    let mut trajectory = TrajectoryEstimate::new();
    for a in front.trajectory.values() {
        if let Some(anchor) = map.resolve_pose(a.anchor) {
            let pose = a.relative.compose(&anchor);
            trajectory.push(a.timestamp, pose.inverse()).expect("frames are time-ordered");
        }
    }
    let mut report = front.report;
    report.timings.merge(timings);
    report.loops = loops;
    report.keyframes = map.keyframes.len();
    report.map_points = map.points.len();
    report.vocabulary_words = vocabulary.map_or(0, |v| v.word_count());
    if let Some(gt) = &reader.ground_truth {
        let mode = if params.stereo { AlignMode::Se3 } else { AlignMode::Sim3 };
        report.ate = evaluate_ate(&trajectory, gt, mode, DEFAULT_MAX_DT).ok().map(|(ate, _)| ate);
    }
    RunOutput { trajectory, snapshot: MapSnapshot::from_map(&map), report, map }
}
