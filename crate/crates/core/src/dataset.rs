//! Dataset ingestion for EuRoC-style `mav0` directory trees: EuRoC, TUM-VI and
//! synthetic exports.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::evaluation::TrajectoryEstimate;
use crate::features::GrayImage;
use crate::geometry::PinholeCamera;
use crate::simworld::{load_scene_file, SyntheticScene, SCENE_FILE};

/// Left and right images closer than this are a stereo pair, nanoseconds.
pub const STEREO_TOLERANCE_NS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("missing manifest {0}")]
    MissingManifest(PathBuf),
    #[error("{path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("unreadable image {path}: {message}")]
    UnreadableImage { path: PathBuf, message: String },
    #[error("timestamps not increasing at {0} ns")]
    NonMonotonic(u64),
    #[error("ground truth: {0}")]
    GroundTruth(String),
    #[error("scene file: {0}")]
    Scene(String),
    #[error("no camera intrinsics found")]
    NoCamera,
    #[error("unknown layout {0:?} (expected euroc, tumvi or synthetic)")]
    UnknownLayout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Euroc,
    Tumvi,
    Synthetic,
}

impl FromStr for Layout {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euroc" => Ok(Layout::Euroc),
            "tumvi" | "tum-vi" => Ok(Layout::Tumvi),
            "synthetic" => Ok(Layout::Synthetic),
            _ => Err(DatasetError::UnknownLayout(s.to_string())),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Euroc => "euroc",
            Layout::Tumvi => "tumvi",
            Layout::Synthetic => "synthetic",
        })
    }
}

/// Where the pixels of one image come from.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameSource {
    Image(PathBuf),
    /// Frame index of the synthetic scene.
    Synthetic(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFrame {
    pub timestamp_ns: u64,
    pub left: FrameSource,
    pub right: Option<FrameSource>,
}

impl DatasetFrame {
    pub fn timestamp(&self) -> f64 {
        self.timestamp_ns as f64 * 1e-9
    }
}

#[derive(Clone, Debug)]
pub struct DatasetReader {
    pub root: PathBuf,
    pub layout: Layout,
    /// Time-ordered frames; stereo frames only when a right camera exists.
    pub frames: Vec<DatasetFrame>,
    pub camera: Option<PinholeCamera>,
    /// Distance between the two camera centres, metres.
    pub stereo_baseline: Option<f64>,
    /// Camera-to-world ground truth.
    pub ground_truth: Option<TrajectoryEstimate>,
    pub scene: Option<Arc<SyntheticScene>>,
    /// Pairs dropped for a missing or misaligned right image.
    pub skipped: usize,
}

impl DatasetReader {
    /// In-memory reader over a generated scene, as if it had been exported.
    pub fn from_scene(scene: SyntheticScene) -> Self {
        let stereo = scene.spec.stereo_baseline > 0.0;
        let frames = (0..scene.poses.len())
            .map(|i| DatasetFrame {
                timestamp_ns: crate::simworld::timestamp_ns(&scene, i),
                left: FrameSource::Synthetic(i),
                right: stereo.then_some(FrameSource::Synthetic(i)),
            })
            .collect();
        Self {
            root: PathBuf::new(),
            layout: Layout::Synthetic,
            frames,
            camera: Some(scene.camera()),
            stereo_baseline: stereo.then_some(scene.spec.stereo_baseline),
            ground_truth: Some(scene.trajectory()),
            scene: Some(Arc::new(scene)),
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_stereo(&self) -> bool {
        self.frames.iter().any(|f| f.right.is_some())
    }

    /// Decodes an image source as grayscale in `[0, 1]`.
    pub fn load_image(source: &FrameSource) -> Result<GrayImage, DatasetError> {
        match source {
            FrameSource::Image(path) => image::open(path)
                .map(|img| GrayImage::from_dynamic(&img))
                .map_err(|e| DatasetError::UnreadableImage { path: path.clone(), message: e.to_string() }),
            FrameSource::Synthetic(i) => Err(DatasetError::UnreadableImage {
                path: PathBuf::from(format!("synthetic frame {i}")),
                message: "synthetic frames have no pixels".into(),
            }),
        }
    }
}

/// `(timestamp ns, file name)` rows of a camera manifest.
fn read_manifest(path: &Path) -> Result<Vec<(u64, String)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|_| DatasetError::MissingManifest(path.to_path_buf()))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| DatasetError::Manifest { path: path.to_path_buf(), line: n + 1, message };
        let (ts, name) = line.split_once(',').ok_or_else(|| bad("expected `timestamp,filename`".into()))?;
        let ts = ts.trim().parse::<u64>().map_err(|_| bad(format!("bad timestamp {ts:?}")))?;
        rows.push((ts, name.trim().to_string()));
    }
    for w in rows.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(DatasetError::NonMonotonic(w[1].0));
        }
    }
    Ok(rows)
}

fn yaml_numbers(text: &str, key: &str) -> Option<Vec<f64>> {
    let start = text.find(&format!("{key}:"))? + key.len() + 1;
    let rest = &text[start..];
    let open = rest.find('[')?;
    let close = rest.find(']')?;
    if close < open {
        return None;
    }
    rest[open + 1..close].split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
}

/// Pinhole intrinsics from an EuRoC `sensor.yaml` (distortion is ignored).
fn read_sensor_camera(path: &Path) -> Option<PinholeCamera> {
    let text = fs::read_to_string(path).ok()?;
    let k = yaml_numbers(&text, "intrinsics")?;
    let r = yaml_numbers(&text, "resolution")?;
    if k.len() != 4 || r.len() != 2 {
        return None;
    }
    PinholeCamera::new(k[0], k[1], k[2], k[3], r[0] as u32, r[1] as u32).ok()
}

/// Camera centre in the body frame from the `T_BS` entry of a `sensor.yaml`.
fn read_sensor_origin(path: &Path) -> Option<[f64; 3]> {
    let text = fs::read_to_string(path).ok()?;
    let start = text.find("T_BS")?;
    let v = yaml_numbers(&text[start..], "data")?;
    (v.len() == 16).then(|| [v[3], v[7], v[11]])
}

fn read_ground_truth(path: &Path) -> Result<Option<TrajectoryEstimate>, DatasetError> {
    let Ok(file) = fs::File::open(path) else { return Ok(None) };
    TrajectoryEstimate::read_euroc_csv(BufReader::new(file))
        .map(Some)
        .map_err(|e| DatasetError::GroundTruth(format!("{}: {e}", path.display())))
}

/// Indexes the dataset under `root`. Image files are checked for existence;
/// a stereo pair whose right image is missing or more than 1 ms away from the
/// left one is skipped with a warning.
pub fn read_dataset(root: &Path, layout: Layout) -> Result<DatasetReader, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_path_buf()));
    }
    let mav = root.join("mav0");
    let cam0 = mav.join("cam0");
    let cam1 = mav.join("cam1");
    let left = read_manifest(&cam0.join("data.csv"))?;
    let right = if cam1.join("data.csv").is_file() { Some(read_manifest(&cam1.join("data.csv"))?) } else { None };

    let scene = match layout {
        Layout::Synthetic => {
            if !root.join(SCENE_FILE).is_file() {
                return Err(DatasetError::MissingManifest(root.join(SCENE_FILE)));
            }
            Some(Arc::new(load_scene_file(root).map_err(|e| DatasetError::Scene(e.to_string()))?))
        }
        _ => None,
    };

    let source = |dir: &Path, ts: u64, name: &str| -> Result<FrameSource, DatasetError> {
        match &scene {
            Some(s) => {
                let index = (ts as f64 * 1e-9 * s.spec.rate_hz).round() as usize;
                if index >= s.poses.len() {
                    return Err(DatasetError::Scene(format!("timestamp {ts} beyond the {} scene frames", s.poses.len())));
                }
                Ok(FrameSource::Synthetic(index))
            }
            None => {
                let path = dir.join("data").join(name);
                if path.is_file() {
                    Ok(FrameSource::Image(path))
                } else {
                    Err(DatasetError::UnreadableImage { path, message: "file not found".into() })
                }
            }
        }
    };

    let mut frames = Vec::with_capacity(left.len());
    let mut skipped = 0;
    let mut j = 0;
    for (ts, name) in &left {
        let left_source = source(&cam0, *ts, name)?;
        let right_source = match &right {
            None => None,
            Some(rows) => {
                while j + 1 < rows.len() && rows[j + 1].0.abs_diff(*ts) <= rows[j].0.abs_diff(*ts) {
                    j += 1;
                }
                let paired = rows.get(j).filter(|(rt, _)| rt.abs_diff(*ts) <= STEREO_TOLERANCE_NS);
                match paired.map(|(rt, rn)| source(&cam1, *rt, rn)) {
                    Some(Ok(s)) => Some(s),
                    Some(Err(e)) => {
                        log::warn!("skipping stereo pair at {ts} ns: {e}");
                        skipped += 1;
                        continue;
                    }
                    None => {
                        log::warn!("skipping stereo pair at {ts} ns: no right image within 1 ms");
                        skipped += 1;
                        continue;
                    }
                }
            }
        };
        frames.push(DatasetFrame { timestamp_ns: *ts, left: left_source, right: right_source });
    }

    let camera = match &scene {
        Some(s) => Some(s.camera()),
        None => read_sensor_camera(&cam0.join("sensor.yaml")),
    };
    let stereo_baseline = match (&scene, right.is_some()) {
        (Some(s), true) => Some(s.spec.stereo_baseline),
        (None, true) => {
            match (read_sensor_origin(&cam0.join("sensor.yaml")), read_sensor_origin(&cam1.join("sensor.yaml"))) {
                (Some(a), Some(b)) => Some(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()),
                _ => None,
            }
        }
        _ => None,
    };
    let gt_path = match layout {
        Layout::Tumvi => mav.join("mocap0").join("data.csv"),
        Layout::Euroc | Layout::Synthetic => mav.join("state_groundtruth_estimate0").join("data.csv"),
    };
    let ground_truth = read_ground_truth(&gt_path)?;

    Ok(DatasetReader {
        root: root.to_path_buf(),
        layout,
        frames,
        camera,
        stereo_baseline,
        ground_truth,
        scene,
        skipped,
    })
}
