use std::collections::BTreeMap;

use nalgebra::{UnitQuaternion, Vector3};

use super::*;
use crate::features::AdaptiveThresholdState;
use crate::loopclosure::{binarize, train_vocabulary};
use crate::matching::BruteForceMatcher;
use crate::simworld::{generate_scene, render_frame, render_view, SceneSpec, SyntheticScene, TrajectoryKind};

fn frame_from(scene: &SyntheticScene, id: usize, pose: &PoseSE3) -> Frame {
    let r = render_view(scene, pose, id, false);
    Frame::new(id as u64, scene.timestamp(id), r.features, scene.camera())
}

fn frame_at(scene: &SyntheticScene, id: usize) -> Frame {
    Frame::new(id as u64, scene.timestamp(id), render_frame(scene, id).features, scene.camera())
}

/// Camera at `center` looking along `forward` in the y-down world.
fn looking(center: Vector3<f64>, forward: Vector3<f64>) -> PoseSE3 {
    let z = forward.normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    PoseSE3::from_rotation_matrix(&r, -(r * center))
}

/// Map with keyframes at the ground-truth poses of `frames` and exact points.
fn ground_truth_map(scene: &SyntheticScene, frames: &[usize]) -> WorldMap {
    let mut map = WorldMap::new();
    let mut point_of: BTreeMap<usize, PointId> = BTreeMap::new();
    for &f in frames {
        let r = render_frame(scene, f);
        let id = map.add_keyframe(KeyFrame::new(f as u64, scene.timestamp(f), scene.poses[f], scene.camera(), r.features.clone()));
        for (i, l) in r.labels.iter().enumerate() {
            let Some(l) = *l else { continue };
            let p = *point_of.entry(l).or_insert_with(|| map.add_point(scene.landmarks[l], scene.descriptor(l).to_vec(), id));
            map.add_observation(p, id, i).unwrap();
        }
    }
    map
}

/// Frame with its features associated to the ground-truth map points.
fn associated_frame(scene: &SyntheticScene, map: &WorldMap, f: usize) -> Frame {
    let r = render_frame(scene, f);
    let by_landmark: BTreeMap<usize, PointId> = map
        .points
        .values()
        .filter_map(|p| scene.landmarks.iter().position(|x| *x == p.position).map(|l| (l, p.id)))
        .collect();
    let mut frame = Frame::new(f as u64, scene.timestamp(f), r.features, scene.camera());
    frame.pose = Some(scene.poses[f]);
    frame.points = r.labels.iter().map(|l| l.and_then(|l| by_landmark.get(&l).copied())).collect();
    frame
}

fn line_scene(landmarks: usize, seed: u64) -> SyntheticScene {
    generate_scene(&SceneSpec { landmarks, trajectory: TrajectoryKind::Line, frames: 10, radius: 1.0, ..Default::default() }, seed)
        .unwrap()
}

fn circle_scene(frames: usize) -> SyntheticScene {
    generate_scene(&SceneSpec { landmarks: 400, frames, ..Default::default() }, 3).unwrap()
}

#[test]
fn initialization_recovers_relative_pose_up_to_scale() {
    let scene = line_scene(200, 1);
    let pa = looking(Vector3::new(0.0, 0.0, 0.0), Vector3::z());
    let pb = looking(Vector3::new(0.3, 0.0, 0.0), Vector3::new(-0.05, 0.0, 1.0));
    let (a, b) = (frame_from(&scene, 0, &pa), frame_from(&scene, 1, &pb));
    let init = initialize_monocular(&a, &b, &mut BruteForceMatcher, &TrackerParams::default()).unwrap();
    assert!(init.map.points.len() >= 150, "{}", init.map.points.len());
    let truth = pb.compose(&pa.inverse());
    let (angle, _) = PoseSE3::new(init.pose.rotation, Vector3::zeros()).difference(&PoseSE3::new(truth.rotation, Vector3::zeros()));
    assert!(angle < 1e-3, "rotation error {angle}");
    let dir = init.pose.translation.normalize() - truth.translation.normalize();
    assert!(dir.norm() < 1e-3, "translation direction error {}", dir.norm());
    let depth = init.map.median_depth(init.keyframes[0]).unwrap();
    assert!((depth - 1.0).abs() < 1e-9);
    assert_eq!(init.map.keyframes[&init.keyframes[1]].parent, Some(init.keyframes[0]));
    init.map.check_integrity().unwrap();
}

#[test]
fn identical_frames_are_degenerate() {
    let scene = line_scene(200, 1);
    let a = frame_at(&scene, 0);
    let err = initialize_monocular(&a, &a.clone(), &mut BruteForceMatcher, &TrackerParams::default()).unwrap_err();
    assert!(matches!(err, TrackError::DegenerateGeometry(_)), "{err:?}");
}

#[test]
fn sparse_frames_have_insufficient_matches() {
    let scene = line_scene(200, 1);
    let mut a = frame_at(&scene, 0);
    let mut b = frame_at(&scene, 5);
    a.features = a.features.subset(&(0..10).collect::<Vec<_>>());
    b.features = b.features.subset(&(0..10).collect::<Vec<_>>());
    let err = initialize_monocular(&a, &b, &mut BruteForceMatcher, &TrackerParams::default()).unwrap_err();
    assert!(matches!(err, TrackError::InsufficientMatches { got: 10, .. }), "{err:?}");
}

#[test]
fn coarse_tracking_follows_a_smooth_sequence() {
    let scene = circle_scene(120);
    let map = ground_truth_map(&scene, &[0]);
    let params = TrackerParams::default();
    let mut last = associated_frame(&scene, &map, 0);
    let mut velocity = PoseSE3::identity();
    for f in 1..8 {
        let frame = frame_at(&scene, f);
        let predicted = velocity.compose(&last.pose.unwrap());
        let r = track_coarse(&last, &predicted, &frame, &map, &mut BruteForceMatcher, &params).unwrap();
        let (_, err) = r.pose.inverse().difference(&scene.poses[f].inverse());
        assert!(err < 0.01, "frame {f}: {err} m");
        assert!(r.inliers >= 20);
        velocity = r.pose.compose(&last.pose.unwrap().inverse());
        last = Frame { pose: Some(r.pose), points: r.points, ..frame };
    }
}

#[test]
fn coarse_tracking_fails_without_overlap() {
    let scene = circle_scene(60);
    let other = generate_scene(&SceneSpec { landmarks: 400, frames: 60, ..Default::default() }, 99).unwrap();
    let map = ground_truth_map(&scene, &[0]);
    let last = associated_frame(&scene, &map, 0);
    let frame = frame_at(&other, 1);
    let err = track_coarse(&last, &last.pose.unwrap(), &frame, &map, &mut BruteForceMatcher, &TrackerParams::default())
        .unwrap_err();
    assert!(matches!(err, TrackError::TooFewMatches { .. }), "{err:?}");
}

#[test]
fn coarse_tracking_survives_a_sudden_rotation() {
    let scene = circle_scene(120);
    let map = ground_truth_map(&scene, &[0]);
    let last = associated_frame(&scene, &map, 0);
    let jump = UnitQuaternion::from_euler_angles(0.0, 30f64.to_radians(), 0.0);
    let truth = PoseSE3::new(jump * scene.poses[1].rotation, jump * scene.poses[1].translation);
    let frame = frame_from(&scene, 1, &truth);
    let velocity = scene.poses[1].compose(&scene.poses[0].inverse());
    let predicted = velocity.compose(&last.pose.unwrap());
    let r = track_coarse(&last, &predicted, &frame, &map, &mut BruteForceMatcher, &TrackerParams::default()).unwrap();
    let (angle, trans) = r.pose.inverse().difference(&truth.inverse());
    assert!(angle < 1e-6 && trans < 1e-6, "{angle} rad, {trans} m");
}

#[test]
fn reference_copy_recovers_the_reference_pose() {
    let scene = circle_scene(60);
    let map = ground_truth_map(&scene, &[10]);
    let kf = &map.keyframes[&0];
    let frame = Frame::new(99, 1.0, kf.features.clone(), kf.camera);
    let r = track_reference(Some(0), &frame, &map, &mut BruteForceMatcher, &TrackerParams::default()).unwrap();
    let (angle, trans) = r.pose.difference(&kf.pose);
    assert!(angle < 1e-9 && trans < 1e-9, "{angle} {trans}");
}

#[test]
fn reference_tracking_handles_half_a_metre_of_motion() {
    let scene = line_scene(400, 4);
    let pa = looking(Vector3::new(0.0, 0.0, 0.0), Vector3::z());
    let pb = looking(Vector3::new(0.5, 0.0, 0.0), Vector3::new(0.45, 0.0, 1.0));
    let mut map = WorldMap::new();
    let r = render_view(&scene, &pa, 0, false);
    let kf = map.add_keyframe(KeyFrame::new(0, 0.0, pa, scene.camera(), r.features.clone()));
    for (i, l) in r.labels.iter().enumerate() {
        let l = l.unwrap();
        let p = map.add_point(scene.landmarks[l], scene.descriptor(l).to_vec(), kf);
        map.add_observation(p, kf, i).unwrap();
    }
    let rb = render_view(&scene, &pb, 1, false);
    let shared = rb.labels.iter().filter(|l| r.labels.contains(l)).count();
    let overlap = shared as f64 / r.labels.len() as f64;
    assert!(overlap > 0.5 && overlap < 0.9, "overlap {overlap}");
    let frame = Frame::new(1, 0.05, rb.features, scene.camera());
    let est = track_reference(Some(kf), &frame, &map, &mut BruteForceMatcher, &TrackerParams::default()).unwrap();
    let (_, err) = est.pose.inverse().difference(&pb.inverse());
    assert!(err < 0.02, "{err} m");
}

#[test]
fn reference_tracking_fails_on_a_disjoint_view() {
    let scene = circle_scene(60);
    let other = generate_scene(&SceneSpec { landmarks: 400, frames: 60, ..Default::default() }, 99).unwrap();
    let map = ground_truth_map(&scene, &[0]);
    let frame = frame_at(&other, 0);
    let err = track_reference(Some(0), &frame, &map, &mut BruteForceMatcher, &TrackerParams::default()).unwrap_err();
    assert!(matches!(err, TrackError::TooFewMatches { .. }), "{err:?}");
    let missing = track_reference(None, &frame, &map, &mut BruteForceMatcher, &TrackerParams::default()).unwrap_err();
    assert_eq!(missing, TrackError::NoReference);
}

fn places(scene: &SyntheticScene, map: &WorldMap) -> (KeyframeDatabase, VocabularyTree) {
    let corpus: Vec<_> = (0..scene.landmarks.len()).map(|l| binarize(scene.descriptor(l))).collect();
    let vocabulary = train_vocabulary(&corpus, 10, 4, 1).unwrap();
    let mut db = KeyframeDatabase::new();
    for (id, kf) in &map.keyframes {
        db.add(*id, quantize(&vocabulary, &kf.features));
    }
    (db, vocabulary)
}

#[test]
fn relocalization_recovers_a_revisited_viewpoint() {
    let scene = circle_scene(120);
    let map = ground_truth_map(&scene, &[0, 20, 40, 60, 80, 100]);
    let (db, vocabulary) = places(&scene, &map);
    let wobble = UnitQuaternion::from_euler_angles(0.02, -0.03, 0.01);
    let truth = PoseSE3::new(wobble * scene.poses[41].rotation, wobble * scene.poses[41].translation);
    let frame = frame_from(&scene, 41, &truth);
    let (kf, r) = relocalize(&frame, &map, &db, &vocabulary, &mut BruteForceMatcher, &TrackerParams::default()).unwrap();
    assert_eq!(map.keyframes[&kf].frame_id, 40);
    let (_, err) = r.pose.inverse().difference(&truth.inverse());
    assert!(err < 0.05, "{err} m");
}

fn long_line_scene() -> SyntheticScene {
    let spec = SceneSpec { landmarks: 1500, trajectory: TrajectoryKind::Line, frames: 40, radius: 6.0, ..Default::default() };
    generate_scene(&spec, 12).unwrap()
}

#[test]
fn relocalization_in_an_unmapped_area_has_no_candidate() {
    let scene = long_line_scene();
    let map = ground_truth_map(&scene, &[0, 1, 2, 3]);
    let (db, vocabulary) = places(&scene, &map);
    let frame = frame_at(&scene, 39);
    let err = relocalize(&frame, &map, &db, &vocabulary, &mut BruteForceMatcher, &TrackerParams::default()).unwrap_err();
    assert_eq!(err, TrackError::NoCandidate);
}

#[test]
fn relocalization_without_shared_points_has_no_consensus() {
    let scene = long_line_scene();
    let mut map = ground_truth_map(&scene, &[0]);
    let bare = map.add_keyframe(KeyFrame::new(39, 2.0, scene.poses[39], scene.camera(), render_frame(&scene, 39).features));
    let (db, vocabulary) = places(&scene, &map);
    assert!(db.vector(bare).is_some());
    let frame = frame_at(&scene, 39);
    let err = relocalize(&frame, &map, &db, &vocabulary, &mut BruteForceMatcher, &TrackerParams::default()).unwrap_err();
    assert_eq!(err, TrackError::NoConsensus);
}

fn perturbed_track(scene: &SyntheticScene, map: &WorldMap, f: usize, keep_every: usize) -> (Frame, TrackResult) {
    let full = associated_frame(scene, map, f);
    let frame = Frame { pose: None, points: vec![None; full.features.len()], ..full.clone() };
    let mut points = vec![None; full.features.len()];
    for (j, p) in full.points.iter().enumerate() {
        if j % keep_every == 0 {
            points[j] = *p;
        }
    }
    let nudge = PoseSE3::new(UnitQuaternion::from_euler_angles(0.004, -0.003, 0.002), Vector3::new(0.01, -0.01, 0.005));
    let coarse = refine_frame_pose(&frame, map, &nudge.compose(&scene.poses[f]), points, &TrackerParams {
        pose: PoseOptimizationParams { rounds: 1, iterations: 1, ..Default::default() },
        ..Default::default()
    });
    (frame, coarse)
}

#[test]
fn local_map_tracking_adds_points_and_never_worsens_the_pose() {
    let mut scene_spec = SceneSpec { landmarks: 400, frames: 60, ..Default::default() };
    scene_spec.noise.pixel_sigma = 0.5;
    let scene = generate_scene(&scene_spec, 8).unwrap();
    let map = ground_truth_map(&scene, &[0, 4, 8]);
    let params = TrackerParams::default();
    let (frame, coarse) = perturbed_track(&scene, &map, 6, 5);
    let refined = track_local_map(&frame, &coarse, 2, &map, &params);
    assert!(refined.inliers > 2 * coarse.inliers, "{} vs {}", refined.inliers, coarse.inliers);
    let (index, corr) = correspondences(&frame, &map, &refined.points, &params.ba);
    assert!(!index.is_empty());
    let mask = vec![true; corr.len()];
    let before = crate::mapping::pose_cost(&frame.camera, &coarse.pose, &corr, &mask, params.pose.huber_delta_sq);
    let after = crate::mapping::pose_cost(&frame.camera, &refined.pose, &corr, &mask, params.pose.huber_delta_sq);
    assert!(after <= before, "{after} > {before}");
    let (_, e0) = coarse.pose.inverse().difference(&scene.poses[6].inverse());
    let (_, e1) = refined.pose.inverse().difference(&scene.poses[6].inverse());
    assert!(e1 <= e0, "{e1} > {e0}");
}

#[test]
fn local_map_tracking_without_new_points_returns_the_input() {
    let scene = circle_scene(60);
    let map = ground_truth_map(&scene, &[0]);
    let (frame, coarse) = perturbed_track(&scene, &map, 0, 1);
    assert_eq!(track_local_map(&frame, &coarse, 0, &map, &TrackerParams::default()), coarse);
    let empty = WorldMap::new();
    assert_eq!(track_local_map(&frame, &coarse, 0, &empty, &TrackerParams::default()), coarse);
    let away = TrackResult { pose: PoseSE3::from_translation(Vector3::new(0.0, 0.0, -100.0)).compose(&coarse.pose), ..coarse.clone() };
    let behind = TrackResult { points: vec![None; frame.features.len()], ..away };
    let flipped = PoseSE3::new(UnitQuaternion::from_euler_angles(0.0, std::f64::consts::PI, 0.0), Vector3::zeros());
    let behind = TrackResult { pose: flipped.compose(&scene.poses[0]), ..behind };
    assert_eq!(track_local_map(&frame, &behind, 0, &map, &TrackerParams::default()), behind);
}

#[test]
fn keyframe_decision_examples() {
    let p = TrackerParams::default();
    assert!(!decide_keyframe(&p, 100, 100, 5));
    assert!(decide_keyframe(&p, 50, 100, 5));
    assert!(decide_keyframe(&p, 100, 100, 31));
}

fn run_tracker(scene: &SyntheticScene, frames: usize) -> Vec<(TrackingMode, Option<PoseSE3>)> {
    let mut tracker = Tracker::new(TrackerParams::default(), AdaptiveThresholdState::default(), Box::new(BruteForceMatcher));
    let mut map = WorldMap::new();
    let mut trace = Vec::new();
    for f in 0..frames {
        let out = tracker.process(frame_at(scene, f), &map, None);
        if let Some(init) = out.initialization {
            map = init.map;
        }
        trace.push((out.mode, out.pose));
    }
    trace
}

#[test]
fn tracker_state_machine_and_determinism() {
    let scene = circle_scene(300);
    let trace = run_tracker(&scene, 80);
    assert_eq!(trace[0].0, TrackingMode::Uninitialized);
    assert!(trace.iter().any(|t| t.0 == TrackingMode::Tracking));
    for w in trace.windows(2) {
        let allowed = matches!(
            (w[0].0, w[1].0),
            (a, b) if a == b
        ) || matches!(
            (w[0].0, w[1].0),
            (TrackingMode::Uninitialized, TrackingMode::Tracking)
                | (TrackingMode::Tracking, TrackingMode::Lost)
                | (TrackingMode::Lost, TrackingMode::Tracking)
        );
        assert!(allowed, "{:?} -> {:?}", w[0].0, w[1].0);
    }
    for (mode, pose) in &trace {
        if *mode == TrackingMode::Uninitialized {
            assert!(pose.is_none());
        }
    }
    assert_eq!(run_tracker(&scene, 80), trace);
}

#[test]
fn stereo_initialization_is_metric() {
    let spec = SceneSpec { landmarks: 300, frames: 10, stereo_baseline: 0.12, ..Default::default() };
    let scene = generate_scene(&spec, 6).unwrap();
    let mut frame = frame_at(&scene, 0);
    frame.right = Some(crate::simworld::render_right_frame(&scene, 0).features);
    let params = TrackerParams { stereo_baseline: 0.12, ..Default::default() };
    let init = initialize_stereo(&frame, &mut BruteForceMatcher, &params).unwrap();
    assert!(init.map.points.len() > 100);
    let world = scene.poses[0].inverse();
    for p in init.map.points.values() {
        let x = world.transform(&p.position);
        let nearest = scene.landmarks.iter().map(|l| (l - x).norm()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-6, "{nearest}");
    }
}

