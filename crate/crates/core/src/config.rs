//! Run configuration: TOML sections with defaults for absent keys, rejection
//! of unknown keys and range checks on every numeric parameter.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PinholeCamera;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{key}: {message}")]
    Range { key: &'static str, message: String },
    #[error("cannot serialise configuration: {0}")]
    Serialize(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorMode {
    #[default]
    Mono,
    Stereo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Neural,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// ONNX keypoint detector graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector_model: Option<PathBuf>,
    /// ONNX matcher graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matcher_model: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub resize_width: usize,
    pub resize_height: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub nms_radius: usize,
    pub subpixel: bool,
    /// Constant threshold replacing the adaptive one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_threshold: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            resize_width: 400,
            resize_height: 300,
            mu1: 0.1,
            mu2: 0.01,
            nms_radius: 4,
            subpixel: true,
            fixed_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub min_confidence: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { min_confidence: crate::matching::DEFAULT_MIN_CONFIDENCE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub min_init_features: usize,
    pub min_init_points: usize,
    pub init_parallax_deg: f64,
    /// Frames without a successful initialisation before the run aborts.
    pub init_frame_budget: usize,
    pub min_inliers: usize,
    pub keyframe_ratio: f64,
    pub max_keyframe_gap: u64,
    pub lost_after: usize,
    pub local_keyframes: usize,
    pub local_radius: f64,
    pub min_similarity: f64,
    /// Search radius of projection-prior matching.
    pub prior_radius: f64,
    pub reloc_candidates: usize,
    pub reloc_min_score: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            min_init_features: 50,
            min_init_points: 50,
            init_parallax_deg: 1.0,
            init_frame_budget: 100,
            min_inliers: 20,
            keyframe_ratio: 0.8,
            max_keyframe_gap: 30,
            lost_after: 2,
            local_keyframes: 20,
            local_radius: 6.0,
            min_similarity: 0.7,
            prior_radius: 15.0,
            reloc_candidates: 5,
            reloc_min_score: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub lambda: u32,
    /// Covisible keyframes in the local adjustment window.
    pub window: usize,
    pub iterations: usize,
    /// Covisible keyframes searched for new points and fusion.
    pub neighbors: usize,
    pub min_baseline_ratio: f64,
    pub fuse_radius: f64,
    pub cull_redundancy: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            lambda: crate::mapping::DEFAULT_LAMBDA,
            window: 10,
            iterations: 20,
            neighbors: 10,
            min_baseline_ratio: 0.01,
            fuse_radius: 4.0,
            cull_redundancy: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub enabled: bool,
    /// Pre-trained vocabulary; trained on frames of the sequence when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    /// Vocabulary branching factor when training on the fly.
    pub k: usize,
    /// Vocabulary depth when training on the fly.
    pub depth: usize,
    /// Candidate groups kept per query.
    pub top_groups: usize,
    pub min_similarity: f64,
    /// Keyframes separating a loop candidate from the query.
    pub min_gap: u64,
    /// Consecutive detections required before geometric checks.
    pub consistency: usize,
    pub sim3_min_inliers: usize,
    /// Matches across covisible keyframes required to accept a loop.
    pub verify_threshold: usize,
    pub global_ba_iterations: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            vocabulary: None,
            k: 10,
            depth: 4,
            top_groups: 3,
            min_similarity: 0.0,
            min_gap: 10,
            consistency: 3,
            sim3_min_inliers: 20,
            verify_threshold: 40,
            global_ba_iterations: 10,
        }
    }
}

/// Ablation toggles; each one disables a component of the full system.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Projection-prior matching in coarse tracking instead of the full matcher.
    pub mt: bool,
    /// Epipolar-guided point creation instead of the full matcher.
    pub lm: bool,
    /// Identity information weights in bundle adjustment.
    pub lc: bool,
}

/// Artificial drift applied by the mapping stage, for loop-closure tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugConfig {
    /// Keyframe count at which the drift is injected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_at_keyframe: Option<usize>,
    pub drift_scale: f64,
    pub drift_yaw_deg: f64,
    pub drift_translation: [f64; 3],
}

impl Default for DebugConfig {
    fn default() -> Self {
        Self { drift_at_keyframe: None, drift_scale: 1.0, drift_yaw_deg: 0.0, drift_translation: [0.0; 3] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: SensorMode,
    /// Single-threaded round-robin execution.
    pub deterministic: bool,
    pub seed: u64,
    pub backend: BackendConfig,
    /// Overrides the camera found in the dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<PinholeCamera>,
    pub features: FeatureConfig,
    pub matcher: MatcherConfig,
    pub tracker: TrackerConfig,
    pub mapping: MappingConfig,
    #[serde(rename = "loop")]
    pub loop_closure: LoopConfig,
    pub ablation: AblationConfig,
    pub debug: DebugConfig,
}

fn check(ok: bool, key: &'static str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range { key, message: message.into() })
    }
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl RunConfig {
    /// Checks every parameter against its documented range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = &self.features;
        check(f.resize_width >= 16 && f.resize_height >= 16, "features.resize", "resize must be at least 16x16")?;
        check(f.mu1 >= 0.0 && f.mu1.is_finite(), "features.mu1", format!("must be >= 0, got {}", f.mu1))?;
        check(positive(f.mu2), "features.mu2", format!("must be > 0, got {}", f.mu2))?;
        check(f.nms_radius <= 64, "features.nms_radius", "must be <= 64")?;
        if let Some(t) = f.fixed_threshold {
            check(unit(t), "features.fixed_threshold", format!("must lie in [0, 1], got {t}"))?;
        }
        let m = self.matcher.min_confidence;
        check(unit(m), "matcher.min_confidence", format!("must lie in [0, 1], got {m}"))?;

        let t = &self.tracker;
        check(t.min_init_features >= 8, "tracker.min_init_features", "must be >= 8")?;
        check(t.min_init_points >= 8, "tracker.min_init_points", "must be >= 8")?;
        check(t.init_parallax_deg > 0.0 && t.init_parallax_deg < 90.0, "tracker.init_parallax_deg", "must lie in (0, 90)")?;
        check(t.init_frame_budget >= 2, "tracker.init_frame_budget", "must be >= 2")?;
        check(t.min_inliers >= 6, "tracker.min_inliers", "must be >= 6")?;
        check(t.keyframe_ratio > 0.0 && t.keyframe_ratio <= 1.0, "tracker.keyframe_ratio", "must lie in (0, 1]")?;
        check(t.max_keyframe_gap >= 1, "tracker.max_keyframe_gap", "must be >= 1")?;
        check(t.lost_after >= 1, "tracker.lost_after", "must be >= 1")?;
        check(t.local_keyframes >= 1, "tracker.local_keyframes", "must be >= 1")?;
        check(positive(t.local_radius), "tracker.local_radius", "must be > 0")?;
        check(unit(t.min_similarity), "tracker.min_similarity", "must lie in [0, 1]")?;
        check(positive(t.prior_radius), "tracker.prior_radius", "must be > 0")?;
        check(t.reloc_candidates >= 1, "tracker.reloc_candidates", "must be >= 1")?;
        check(unit(t.reloc_min_score), "tracker.reloc_min_score", "must lie in [0, 1]")?;

        let mp = &self.mapping;
        check((1..=100).contains(&mp.lambda), "mapping.lambda", "must lie in [1, 100]")?;
        check(mp.window >= 1, "mapping.window", "must be >= 1")?;
        check(mp.iterations >= 1, "mapping.iterations", "must be >= 1")?;
        check(mp.neighbors >= 1, "mapping.neighbors", "must be >= 1")?;
        check(mp.min_baseline_ratio >= 0.0 && mp.min_baseline_ratio < 1.0, "mapping.min_baseline_ratio", "must lie in [0, 1)")?;
        check(positive(mp.fuse_radius), "mapping.fuse_radius", "must be > 0")?;
        check(mp.cull_redundancy > 0.0 && mp.cull_redundancy <= 1.0, "mapping.cull_redundancy", "must lie in (0, 1]")?;

        let l = &self.loop_closure;
        check(l.k >= 2, "loop.k", "must be >= 2")?;
        check((1..=8).contains(&l.depth), "loop.depth", "must lie in [1, 8]")?;
        check(l.top_groups >= 1, "loop.top_groups", "must be >= 1")?;
        check(unit(l.min_similarity), "loop.min_similarity", "must lie in [0, 1]")?;
        check(l.consistency >= 1, "loop.consistency", "must be >= 1")?;
        check(l.sim3_min_inliers >= 3, "loop.sim3_min_inliers", "must be >= 3")?;

        let d = &self.debug;
        check(positive(d.drift_scale), "debug.drift_scale", "must be > 0")?;
        check(d.drift_yaw_deg.is_finite(), "debug.drift_yaw_deg", "must be finite")?;
        check(d.drift_translation.iter().all(|v| v.is_finite()), "debug.drift_translation", "must be finite")?;

        if let Some(c) = &self.camera {
            check(positive(c.fx) && positive(c.fy), "camera", "focal lengths must be > 0")?;
            check(c.width > 0 && c.height > 0, "camera", "resolution must be positive")?;
        }
        if self.backend.kind == BackendKind::Neural {
            for (key, path) in
                [("backend.detector_model", &self.backend.detector_model), ("backend.matcher_model", &self.backend.matcher_model)]
            {
                match path {
                    None => return Err(ConfigError::Range { key, message: "required by the neural backend".into() }),
                    Some(p) if !p.is_file() => {
                        return Err(ConfigError::Range { key, message: format!("{} does not exist", p.display()) })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text)
}

/// Canonical text form; `parse_config(dump_config(c)) == c`.
pub fn dump_config(config: &RunConfig) -> Result<String, ConfigError> {
    toml::to_string(config).map_err(|e| ConfigError::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn negative_mu1_is_a_range_violation() {
        let err = parse_config("[features]\nmu1 = -1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Range { key: "features.mu1", .. }), "{err}");
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = parse_config("seed = 3\n\n[ablation]\nmt = true\nml = true\n").unwrap_err();
        match err {
            ConfigError::Parse { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("ml"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(matches!(parse_config("[featurs]\nmu1 = 0.2\n"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_value_type_is_a_parse_error() {
        assert!(matches!(parse_config("mode = \"binocular\"\n"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(parse_config("[mapping]\nwindow = \"ten\"\n"), Err(ConfigError::Parse { line: 2, .. })));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = parse_config("mode = \"stereo\"\n[mapping]\nlambda = 7\n[ablation]\nlc = true\n").unwrap();
        assert_eq!(c.mode, SensorMode::Stereo);
        assert_eq!(c.mapping.lambda, 7);
        assert_eq!(c.mapping.window, MappingConfig::default().window);
        assert!(c.ablation.lc && !c.ablation.mt && !c.ablation.lm);
    }

    #[test]
    fn neural_backend_requires_existing_models() {
        let err = parse_config("[backend]\nkind = \"neural\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Range { key: "backend.detector_model", .. }));
        let err = parse_config("[backend]\nkind = \"neural\"\ndetector_model = \"/nonexistent/a.onnx\"\nmatcher_model = \"/nonexistent/b.onnx\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("sp.onnx"), dir.path().join("lg.onnx"));
        std::fs::write(&a, b"x").unwrap();
        std::fs::write(&b, b"x").unwrap();
        let text = format!("[backend]\nkind = \"neural\"\ndetector_model = {:?}\nmatcher_model = {:?}\n", a, b);
        assert!(parse_config(&text).is_ok());
    }

    #[test]
    fn sample_config_round_trips_exactly() {
        let sample = include_str!("../../../docs/sample_config.toml");
        let parsed = parse_config(sample).unwrap();
        assert_eq!(dump_config(&parsed).unwrap(), sample);
    }

    #[test]
    fn dump_then_parse_is_identity() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.features.fixed_threshold = Some(0.35);
        c.camera = Some(PinholeCamera { fx: 458.0, fy: 457.0, cx: 367.0, cy: 248.0, width: 752, height: 480 });
        c.debug.drift_at_keyframe = Some(12);
        c.debug.drift_translation = [0.1, -0.2, 0.3];
        assert_eq!(parse_config(&dump_config(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(load_config(Path::new("/nonexistent/run.toml")), Err(ConfigError::Io { .. })));
    }
}
