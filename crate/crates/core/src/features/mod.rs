//! Keypoint extraction: detector inference, adaptive confidence threshold,
//! non-maximum suppression, descriptor lookup and rescaling to the input image.

mod extract;
mod field;
#[cfg(feature = "onnx")]
mod neural;
mod threshold;

pub use extract::{extract, rgb_to_gray, DetectorBackend, DetectorInput, FeatureParams, FrameInput, GrayImage};
pub use field::{DescriptorGrid, GridStorage, ScoreField};
#[cfg(feature = "onnx")]
pub use neural::NeuralDetector;
pub use threshold::{
    compute_adaptive_threshold, filter_scores, refine_subpixel, rescale_keypoints, score_statistics, suppress,
    threshold_cells, AdaptiveThresholdState, Candidate,
};

use nalgebra::Vector2;
use thiserror::Error;

/// Descriptor length produced by the detector.
pub const DESCRIPTOR_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("detector backend failed: {0}")]
    Backend(String),
    #[error("invalid score field: {0}")]
    InvalidField(String),
    #[error("invalid feature parameter: {0}")]
    InvalidParameter(String),
    #[error("backend {backend} cannot consume {input} input")]
    UnsupportedInput { backend: String, input: &'static str },
    #[error("image error: {0}")]
    Image(String),
}

/// Keypoints of one image in original pixel coordinates with their detector
/// confidences and unit-norm descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub keypoints: Vec<Vector2<f64>>,
    pub scores: Vec<f64>,
    /// Row-major `len × dim`.
    pub descriptors: Vec<f32>,
    pub dim: usize,
    pub width: u32,
    pub height: u32,
    /// Threshold the scores were filtered against.
    pub threshold: f64,
}

impl FeatureSet {
    pub fn empty(dim: usize, width: u32, height: u32) -> Self {
        Self {
            keypoints: Vec::new(),
            scores: Vec::new(),
            descriptors: Vec::new(),
            dim,
            width,
            height,
            threshold: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    /// Appends a feature, normalising its descriptor.
    pub fn push(&mut self, keypoint: Vector2<f64>, score: f64, descriptor: &[f32]) {
        assert_eq!(descriptor.len(), self.dim, "descriptor length");
        self.keypoints.push(keypoint);
        self.scores.push(score);
        self.descriptors.extend(normalized(descriptor));
    }

    /// The features at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        let mut out = FeatureSet { threshold: self.threshold, ..FeatureSet::empty(self.dim, self.width, self.height) };
        for &i in indices {
            out.keypoints.push(self.keypoints[i]);
            out.scores.push(self.scores[i]);
            out.descriptors.extend_from_slice(self.descriptor(i));
        }
        out
    }

    /// Keypoints mapped to `[0, 1]²` by the image size.
    pub fn normalized_keypoints(&self) -> Vec<Vector2<f64>> {
        let (w, h) = (self.width as f64, self.height as f64);
        self.keypoints.iter().map(|k| Vector2::new(k.x / w, k.y / h)).collect()
    }
}

/// L2-normalised copy; zero vectors are returned unchanged.
pub fn normalized(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| (*x as f64 / norm) as f32).collect()
}

/// Cosine similarity of two unit descriptors.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
