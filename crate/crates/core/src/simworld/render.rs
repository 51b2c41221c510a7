use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    jitter, random_unit, stream_rng, ChallengeKind, SyntheticScene, STREAM_RENDER, STREAM_RENDER_RIGHT, STREAM_SHAKE, STREAM_TEXTURE,
};
use crate::features::{normalized, FeatureSet};
use crate::geometry::{PinholeCamera, PoseSE3};

/// Keypoints closer than this to the border are not rendered.
pub const BORDER_MARGIN: f64 = 4.0;
const MIN_RENDER_DEPTH: f64 = 0.1;

/// One rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub features: FeatureSet,
    /// Landmark behind each feature; `None` for outliers.
    pub labels: Vec<Option<usize>>,
    /// World-to-camera pose actually rendered (ground truth plus any shake).
    pub pose: PoseSE3,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn inside(camera: &PinholeCamera, u: &Vector2<f64>) -> bool {
    u.x >= BORDER_MARGIN
        && u.y >= BORDER_MARGIN
        && u.x <= camera.width as f64 - 1.0 - BORDER_MARGIN
        && u.y <= camera.height as f64 - 1.0 - BORDER_MARGIN
}

/// Landmarks hidden by weak texture at `frame`.
fn hidden(scene: &SyntheticScene, frame: usize) -> Vec<bool> {
    let mut mask = vec![false; scene.landmarks.len()];
    for (ci, c) in scene.spec.challenges.iter().enumerate() {
        if c.kind != ChallengeKind::WeakTexture || !c.covers(frame) {
            continue;
        }
        let mut rng = stream_rng(scene.seed, STREAM_TEXTURE, ci as u64);
        for m in mask.iter_mut() {
            if rng.random::<f64>() < scene.spec.challenge_params.weak_texture_drop {
                *m = true;
            }
        }
    }
    mask
}

fn active(scene: &SyntheticScene, frame: usize, kind: ChallengeKind) -> bool {
    scene.spec.challenges.iter().any(|c| c.kind == kind && c.covers(frame))
}

/// Renders the landmarks seen from `pose` with the noise and challenges that
/// apply to `frame`. `right` selects the independent right-camera stream.
pub fn render_view(scene: &SyntheticScene, pose: &PoseSE3, frame: usize, right: bool) -> RenderedFrame {
    let spec = &scene.spec;
    let cam = spec.camera;
    let noise = &spec.noise;
    let stream = if right { STREAM_RENDER_RIGHT } else { STREAM_RENDER };
    let mut rng = stream_rng(scene.seed, stream, frame as u64);
    let lowlight = if active(scene, frame, ChallengeKind::Lowlight) { spec.challenge_params.lowlight_factor } else { 1.0 };
    let hidden = hidden(scene, frame);
    let jitter_sigma = noise.confidence_sigma * (1.0 - noise.quality_share).sqrt();
    let mut features = FeatureSet::empty(spec.descriptor_dim, cam.width, cam.height);
    let mut labels = Vec::new();
    let confidence = |rng: &mut ChaCha8Rng, quality: f64| (quality + jitter_sigma * gaussian(rng)).clamp(0.0, 1.0) * lowlight;
    let mut visible = 0usize;
    for (i, x) in scene.landmarks.iter().enumerate() {
        if hidden[i] {
            continue;
        }
        let xc = pose.transform(x);
        if xc.z < MIN_RENDER_DEPTH {
            continue;
        }
        let Some(exact) = cam.project_camera_point(&xc) else { continue };
        let q = scene.quality[i];
        let sigma = noise.pixel_sigma * (noise.confidence_coupling * (noise.confidence_mean - q)).exp();
        let u = if sigma > 0.0 { exact + Vector2::new(gaussian(&mut rng), gaussian(&mut rng)) * sigma } else { exact };
        if !inside(&cam, &u) {
            continue;
        }
        let c = confidence(&mut rng, q);
        let d = scene.descriptor(i);
        let d = if noise.descriptor_sigma > 0.0 {
            let noisy: Vec<f32> =
                d.iter().map(|v| v + (noise.descriptor_sigma * gaussian(&mut rng)) as f32).collect();
            normalized(&noisy)
        } else {
            d.to_vec()
        };
        features.push(u, c, &d);
        labels.push(Some(i));
        visible += 1;
    }
    if noise.outlier_rate > 0.0 {
        for _ in 0..visible {
            if rng.random::<f64>() >= noise.outlier_rate {
                continue;
            }
            let u = Vector2::new(
                rng.random_range(BORDER_MARGIN..cam.width as f64 - 1.0 - BORDER_MARGIN),
                rng.random_range(BORDER_MARGIN..cam.height as f64 - 1.0 - BORDER_MARGIN),
            );
            let c = confidence(&mut rng, noise.confidence_mean);
            let d = random_unit(&mut rng, spec.descriptor_dim);
            features.push(u, c, &d);
            labels.push(None);
        }
    }
    RenderedFrame { features, labels, pose: *pose }
}

/// Pose the camera sees at `frame`: ground truth, rotated by the shake
/// challenge when one is active.
pub fn rendered_pose(scene: &SyntheticScene, frame: usize, right: bool) -> PoseSE3 {
    let base = if right { scene.right_pose(frame) } else { scene.poses[frame] };
    if !active(scene, frame, ChallengeKind::Shake) {
        return base;
    }
    let mut rng = stream_rng(scene.seed, STREAM_SHAKE, frame as u64);
    let q = jitter(&mut rng, scene.spec.challenge_params.shake_degrees);
    if right {
        // The rig shakes as one body about the left camera centre.
        let left = scene.poses[frame];
        let shaken = PoseSE3::new(q * left.rotation, q * left.translation);
        let offset = scene.right_pose(frame).compose(&left.inverse());
        offset.compose(&shaken)
    } else {
        PoseSE3::new(q * base.rotation, q * base.translation)
    }
}

/// Renders frame `frame` of the left camera.
pub fn render_frame(scene: &SyntheticScene, frame: usize) -> RenderedFrame {
    render_view(scene, &rendered_pose(scene, frame, false), frame, false)
}

/// Renders frame `frame` of the right camera of a stereo rig.
pub fn render_right_frame(scene: &SyntheticScene, frame: usize) -> RenderedFrame {
    render_view(scene, &rendered_pose(scene, frame, true), frame, true)
}
