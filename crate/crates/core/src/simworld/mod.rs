//! Synthetic world: landmark fields with descriptors, ground-truth camera
//! trajectories, rendered feature sets and a detector backend replaying them.

mod detector;
mod drift;
mod export;
mod render;

pub use detector::{CameraSide, SyntheticDetector};
pub use drift::inject_drift;
pub use export::{export_scene, load_scene_file, timestamp_ns, SCENE_FILE};
pub use render::{render_frame, render_right_frame, render_view, rendered_pose, RenderedFrame, BORDER_MARGIN};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::TrajectoryEstimate;
use crate::features::{dot, normalized, DESCRIPTOR_DIM};
use crate::geometry::{Landmark3D, PinholeCamera, PoseSE3};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene parameter: {0}")]
    Parameter(String),
    #[error("descriptor rejection budget exhausted after {placed} of {requested} landmarks")]
    RejectionBudget { placed: usize, requested: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Straight pass along `x` looking at a landmark slab ahead.
    Line,
    /// Orbit around a central landmark volume, looking inward.
    Circle,
    /// Square path inside a walled room, looking outward; revisits its start.
    SquareLoop,
    /// Circle whose true orientation carries per-frame rotational jitter.
    ShakeOverlay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChallengeKind {
    Lowlight,
    Shake,
    WeakTexture,
}

/// A scripted disturbance over frames `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Challenge {
    pub kind: ChallengeKind,
    pub start: usize,
    pub end: usize,
}

impl Challenge {
    pub fn covers(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChallengeParams {
    /// Confidence multiplier under low light.
    pub lowlight_factor: f64,
    /// Fraction of landmarks hidden in weak texture.
    pub weak_texture_drop: f64,
    /// Bound of the uniform per-axis rotational jitter, degrees.
    pub shake_degrees: f64,
}

impl Default for ChallengeParams {
    fn default() -> Self {
        Self { lowlight_factor: 0.4, weak_texture_drop: 0.7, shake_degrees: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Keypoint noise, pixels.
    pub pixel_sigma: f64,
    /// Per-component descriptor noise before renormalisation.
    pub descriptor_sigma: f64,
    /// Spurious features per visible landmark.
    pub outlier_rate: f64,
    pub confidence_mean: f64,
    pub confidence_sigma: f64,
    /// Share of the confidence variance that is a fixed per-landmark quality.
    pub quality_share: f64,
    /// Pixel noise of a landmark scales by `exp(coupling · (mean − quality))`.
    pub confidence_coupling: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            descriptor_sigma: 0.0,
            outlier_rate: 0.0,
            confidence_mean: 0.7,
            confidence_sigma: 0.1,
            quality_share: 0.6,
            confidence_coupling: 0.0,
        }
    }
}

/// Everything that, together with a seed, determines a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub landmarks: usize,
    pub trajectory: TrajectoryKind,
    pub frames: usize,
    pub rate_hz: f64,
    /// Circle radius, half side of the square loop or half length of the line.
    pub radius: f64,
    /// Turns around the circle or square loop.
    pub laps: f64,
    pub camera: PinholeCamera,
    pub descriptor_dim: usize,
    /// Right camera offset along the left camera's `x`; zero renders mono.
    pub stereo_baseline: f64,
    /// Landmark descriptors must stay below this pairwise cosine.
    pub max_cosine: f64,
    /// Rejected draws allowed per landmark.
    pub rejection_budget: usize,
    pub noise: NoiseSpec,
    pub challenges: Vec<Challenge>,
    pub challenge_params: ChallengeParams,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            landmarks: 500,
            trajectory: TrajectoryKind::Circle,
            frames: 300,
            rate_hz: 20.0,
            radius: 3.0,
            laps: 1.0,
            camera: PinholeCamera { fx: 400.0, fy: 400.0, cx: 400.0, cy: 300.0, width: 800, height: 600 },
            descriptor_dim: DESCRIPTOR_DIM,
            stereo_baseline: 0.0,
            max_cosine: 0.8,
            rejection_budget: 1000,
            noise: NoiseSpec::default(),
            challenges: Vec::new(),
            challenge_params: ChallengeParams::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Parameter(m.to_string()));
        if self.landmarks == 0 {
            return bad("landmark count must be at least 1");
        }
        if self.frames == 0 {
            return bad("frame count must be at least 1");
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad("rate must be positive");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive");
        }
        if self.descriptor_dim == 0 {
            return bad("descriptor dimension must be positive");
        }
        if !(self.stereo_baseline >= 0.0 && self.stereo_baseline.is_finite()) {
            return bad("stereo baseline must be non-negative");
        }
        let n = &self.noise;
        if n.pixel_sigma < 0.0 || n.descriptor_sigma < 0.0 || n.confidence_sigma < 0.0 {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&n.outlier_rate) || !(0.0..=1.0).contains(&n.quality_share) {
            return bad("outlier rate and quality share must lie in [0, 1]");
        }
        for c in &self.challenges {
            if c.start > c.end || c.end > self.frames {
                return Err(SimError::Parameter(format!(
                    "challenge interval {}..{} outside 0..{}",
                    c.start, c.end, self.frames
                )));
            }
        }
        let p = &self.challenge_params;
        if !(0.0..=1.0).contains(&p.lowlight_factor) || !(0.0..=1.0).contains(&p.weak_texture_drop) || p.shake_degrees < 0.0 {
            return bad("challenge parameters out of range");
        }
        self.camera.validate().map_err(|e| SimError::Parameter(e.to_string()))
    }

    /// Adds a scripted challenge over `start..end`.
    pub fn script_challenge(&mut self, kind: ChallengeKind, start: usize, end: usize) -> Result<(), SimError> {
        if start > end || end > self.frames {
            return Err(SimError::Parameter(format!("challenge interval {start}..{end} outside 0..{}", self.frames)));
        }
        if start < end {
            self.challenges.push(Challenge { kind, start, end });
        }
        Ok(())
    }
}

/// A generated world: landmarks, their descriptors and qualities, and the
/// ground-truth camera trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub landmarks: Vec<Landmark3D>,
    /// Unit descriptors, row-major `landmarks × dim`.
    pub descriptors: Vec<f32>,
    /// Per-landmark mean detector confidence.
    pub quality: Vec<f64>,
    /// World-to-camera poses of the left camera, one per frame.
    pub poses: Vec<PoseSE3>,
}

impl SyntheticScene {
    pub fn camera(&self) -> PinholeCamera {
        self.spec.camera
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        let d = self.spec.descriptor_dim;
        &self.descriptors[i * d..(i + 1) * d]
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.spec.rate_hz
    }

    /// Ground truth as camera-to-world poses.
    pub fn trajectory(&self) -> TrajectoryEstimate {
        let samples = self.poses.iter().enumerate().map(|(i, p)| (self.timestamp(i), p.inverse())).collect();
        TrajectoryEstimate::from_samples(samples).expect("uniform timestamps increase")
    }

    /// World-to-camera pose of the right camera of a stereo rig.
    pub fn right_pose(&self, frame: usize) -> PoseSE3 {
        PoseSE3::from_translation(Vector3::new(-self.spec.stereo_baseline, 0.0, 0.0)).compose(&self.poses[frame])
    }
}

/// Independent random stream for `(seed, purpose, index)`.
pub(crate) fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.wrapping_mul(1 << 40).wrapping_add(index));
    rng
}

const STREAM_LANDMARKS: u64 = 1;
const STREAM_TRAJECTORY: u64 = 2;
pub(crate) const STREAM_RENDER: u64 = 3;
pub(crate) const STREAM_RENDER_RIGHT: u64 = 4;
pub(crate) const STREAM_TEXTURE: u64 = 5;
pub(crate) const STREAM_SHAKE: u64 = 6;

/// World-to-camera pose at `center` looking along `forward` with world `+y`
/// pointing down in the image.
fn look_along(center: Vector3<f64>, forward: Vector3<f64>) -> PoseSE3 {
    let z = forward.normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    let r_wc = Matrix3::from_columns(&[x, y, z]);
    let r_cw = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r_wc.transpose()));
    PoseSE3::new(r_cw, -(r_cw * center))
}

/// Uniform rotational jitter of up to `degrees` about each camera axis.
pub(crate) fn jitter(rng: &mut ChaCha8Rng, degrees: f64) -> UnitQuaternion<f64> {
    let b = degrees.to_radians();
    if b == 0.0 {
        return UnitQuaternion::identity();
    }
    let mut a = || rng.random_range(-b..=b);
    UnitQuaternion::from_euler_angles(a(), a(), a())
}

/// Point on the square of half side `a` at arc length `s` (counter-clockwise
/// in the `x`-`z` plane, starting at the middle of the `+x` side).
fn square_point(a: f64, s: f64) -> Vector3<f64> {
    let side = 2.0 * a;
    let s = (s + a).rem_euclid(4.0 * side);
    let k = (s / side).floor() as usize;
    let f = s - k as f64 * side - a;
    match k {
        0 => Vector3::new(a, 0.0, f),
        1 => Vector3::new(-f, 0.0, a),
        2 => Vector3::new(-a, 0.0, -f),
        _ => Vector3::new(f, 0.0, -a),
    }
}

fn trajectory(spec: &SceneSpec, seed: u64) -> Vec<PoseSE3> {
    let n = spec.frames;
    let r = spec.radius;
    (0..n)
        .map(|i| {
            let u = if n > 1 { i as f64 / n as f64 } else { 0.0 };
            match spec.trajectory {
                TrajectoryKind::Line => {
                    let u = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                    look_along(Vector3::new(-r + 2.0 * r * u, 0.0, 0.0), Vector3::z())
                }
                TrajectoryKind::Circle | TrajectoryKind::ShakeOverlay => {
                    let theta = std::f64::consts::TAU * spec.laps * u;
                    let c = Vector3::new(r * theta.cos(), 0.0, r * theta.sin());
                    let pose = look_along(c, -c);
                    if spec.trajectory == TrajectoryKind::ShakeOverlay {
                        let mut rng = stream_rng(seed, STREAM_TRAJECTORY, i as u64);
                        let q = jitter(&mut rng, spec.challenge_params.shake_degrees);
                        PoseSE3::new(q * pose.rotation, q * pose.translation)
                    } else {
                        pose
                    }
                }
                TrajectoryKind::SquareLoop => {
                    let c = square_point(r, 8.0 * r * spec.laps * u);
                    look_along(c, c)
                }
            }
        })
        .collect()
}

fn landmark_position(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Landmark3D {
    let r = spec.radius;
    match spec.trajectory {
        TrajectoryKind::Line => Vector3::new(
            rng.random_range(-2.0 * r - 2.0..2.0 * r + 2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(3.0..6.0),
        ),
        TrajectoryKind::Circle | TrajectoryKind::ShakeOverlay => {
            let rho = 0.5 * r * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            Vector3::new(rho * phi.cos(), rng.random_range(-0.5 * r..0.5 * r), rho * phi.sin())
        }
        TrajectoryKind::SquareLoop => {
            let wall = r + 3.0;
            let along = rng.random_range(-wall..wall);
            let depth = wall + rng.random_range(-0.5..0.5);
            let y = rng.random_range(-1.5..1.5);
            match rng.random_range(0..4) {
                0 => Vector3::new(depth, y, along),
                1 => Vector3::new(-depth, y, along),
                2 => Vector3::new(along, y, depth),
                _ => Vector3::new(along, y, -depth),
            }
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return normalized(&v);
        }
    }
}

/// Builds the scene for `(spec, seed)`. Descriptors are drawn by rejection so
/// that every pair stays below `spec.max_cosine`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene, SimError> {
    spec.validate()?;
    let mut rng = stream_rng(seed, STREAM_LANDMARKS, 0);
    let dim = spec.descriptor_dim;
    let mut landmarks = Vec::with_capacity(spec.landmarks);
    let mut descriptors: Vec<f32> = Vec::with_capacity(spec.landmarks * dim);
    let mut quality = Vec::with_capacity(spec.landmarks);
    let n = &spec.noise;
    let quality_sigma = n.confidence_sigma * n.quality_share.sqrt();
    for placed in 0..spec.landmarks {
        let mut attempts = 0;
        let d = loop {
            let d = random_unit(&mut rng, dim);
            if descriptors.chunks(dim).all(|o| (dot(o, &d) as f64) < spec.max_cosine) {
                break d;
            }
            attempts += 1;
            if attempts > spec.rejection_budget {
                return Err(SimError::RejectionBudget { placed, requested: spec.landmarks });
            }
        };
        descriptors.extend(d);
        landmarks.push(landmark_position(spec, &mut rng));
        quality.push(n.confidence_mean + quality_sigma * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(SyntheticScene { spec: spec.clone(), seed, landmarks, descriptors, quality, poses: trajectory(spec, seed) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_scene_keeps_descriptors_apart() {
        let spec = SceneSpec { landmarks: 500, ..Default::default() };
        let scene = generate_scene(&spec, 3).unwrap();
        assert_eq!(scene.landmarks.len(), 500);
        let mut worst = f32::MIN;
        for i in 0..500 {
            assert!((dot(scene.descriptor(i), scene.descriptor(i)) - 1.0).abs() < 1e-5);
            for j in 0..i {
                worst = worst.max(dot(scene.descriptor(i), scene.descriptor(j)));
            }
        }
        assert!(worst < 0.8, "{worst}");
    }

    #[test]
    fn repeated_seed_is_bit_identical() {
        let spec = SceneSpec { landmarks: 50, trajectory: TrajectoryKind::ShakeOverlay, ..Default::default() };
        assert_eq!(generate_scene(&spec, 9).unwrap(), generate_scene(&spec, 9).unwrap());
        assert_ne!(generate_scene(&spec, 9).unwrap().landmarks, generate_scene(&spec, 10).unwrap().landmarks);
    }

    #[test]
    fn zero_landmarks_is_rejected() {
        let spec = SceneSpec { landmarks: 0, ..Default::default() };
        assert!(matches!(generate_scene(&spec, 0), Err(SimError::Parameter(_))));
    }

    #[test]
    fn crowded_descriptor_space_exhausts_budget() {
        let spec = SceneSpec { landmarks: 50, descriptor_dim: 2, rejection_budget: 100, ..Default::default() };
        assert!(matches!(generate_scene(&spec, 0), Err(SimError::RejectionBudget { .. })));
    }

    #[test]
    fn trajectory_timestamps_are_uniform() {
        let scene = generate_scene(&SceneSpec { landmarks: 5, frames: 40, ..Default::default() }, 1).unwrap();
        let t = scene.trajectory();
        for w in t.samples().windows(2) {
            assert!((w[1].0 - w[0].0 - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_cameras_face_the_centre() {
        let scene = generate_scene(&SceneSpec { landmarks: 5, frames: 8, ..Default::default() }, 1).unwrap();
        for p in &scene.poses {
            let c = p.transform(&Vector3::zeros());
            assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && (c.z - 3.0).abs() < 1e-9, "{c}");
        }
    }

    #[test]
    fn square_loop_closes_on_itself() {
        let spec = SceneSpec { landmarks: 5, frames: 100, trajectory: TrajectoryKind::SquareLoop, ..Default::default() };
        let scene = generate_scene(&spec, 1).unwrap();
        let first = scene.poses[0].center();
        assert!((first - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        let step = (scene.poses[1].center() - first).norm();
        assert!((step - 24.0 / 100.0).abs() < 1e-9);
        let last = square_point(3.0, 24.0);
        assert!((last - first).norm() < 1e-12);
    }

    #[test]
    fn invalid_challenge_interval_is_rejected() {
        let mut spec = SceneSpec { frames: 10, ..Default::default() };
        assert!(spec.script_challenge(ChallengeKind::Lowlight, 5, 11).is_err());
        spec.script_challenge(ChallengeKind::Lowlight, 5, 5).unwrap();
        assert!(spec.challenges.is_empty());
    }
}
