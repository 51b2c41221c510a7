use image::{imageops, ImageBuffer, Luma};

use super::{
    compute_adaptive_threshold, filter_scores, normalized, refine_subpixel, rescale_keypoints, AdaptiveThresholdState,
    FeatureError, FeatureSet, ScoreField,
};
use crate::geometry::PinholeCamera;

/// Single-channel image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities.
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(FeatureError::Image(format!("{} pixels for a {width}x{height} image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self { width: img.width() as usize, height: img.height() as usize, data }
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        match img {
            image::DynamicImage::ImageLuma8(g) => Self::from_luma8(g),
            other => rgb_to_gray(&other.to_rgb8()),
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear resize.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("buffer size checked");
        let out = imageops::resize(&buf, width as u32, height as u32, imageops::FilterType::Triangle);
        GrayImage { width, height, data: out.into_raw() }
    }
}

/// Luminance with weights 0.299 / 0.587 / 0.114.
pub fn rgb_to_gray(img: &image::RgbImage) -> GrayImage {
    let data = img
        .pixels()
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect();
    GrayImage { width: img.width() as usize, height: img.height() as usize, data }
}

/// A frame as handed to [`extract`].
#[derive(Clone, Copy, Debug)]
pub enum FrameInput<'a> {
    /// Grayscale image at the original camera resolution.
    Image(&'a GrayImage),
    /// Index into a synthetic sequence; only synthetic backends accept it.
    Synthetic(usize),
}

/// What a backend receives: the resized image or the synthetic frame index.
#[derive(Clone, Copy, Debug)]
pub enum DetectorInput<'a> {
    Image(&'a GrayImage),
    Synthetic(usize),
}

impl DetectorInput<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            DetectorInput::Image(_) => "image",
            DetectorInput::Synthetic(_) => "synthetic",
        }
    }
}

/// Produces a score field and descriptor grid at `width × height`.
pub trait DetectorBackend: Send {
    fn name(&self) -> &str;
    fn infer(&mut self, input: DetectorInput<'_>, width: usize, height: usize) -> Result<ScoreField, FeatureError>;
}

/// Extraction knobs besides the adaptive-threshold state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureParams {
    pub nms_radius: usize,
    /// Log-parabola peak refinement on the score grid.
    pub subpixel: bool,
    /// Replaces the adaptive threshold with a constant.
    pub fixed_threshold: Option<f64>,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { nms_radius: 4, subpixel: true, fixed_threshold: None }
    }
}

/// Runs the backend, thresholds and suppresses its scores, samples and
/// normalises descriptors and maps keypoints back to the camera image.
pub fn extract(
    backend: &mut dyn DetectorBackend,
    input: FrameInput<'_>,
    camera: &PinholeCamera,
    state: &AdaptiveThresholdState,
    params: &FeatureParams,
) -> Result<FeatureSet, FeatureError> {
    let (w, h) = (state.resize_width, state.resize_height);
    let resized;
    let detector_input = match input {
        FrameInput::Image(img) => {
            resized = img.resize(w, h);
            DetectorInput::Image(&resized)
        }
        FrameInput::Synthetic(i) => DetectorInput::Synthetic(i),
    };
    let field = backend.infer(detector_input, w, h)?;
    if field.width != w || field.height != h {
        return Err(FeatureError::Backend(format!(
            "{} returned a {}x{} field, expected {w}x{h}",
            backend.name(),
            field.width,
            field.height
        )));
    }
    let th = params.fixed_threshold.unwrap_or_else(|| compute_adaptive_threshold(&field, state));
    let mut candidates = filter_scores(&field, th, params.nms_radius);
    if params.subpixel {
        for c in &mut candidates {
            refine_subpixel(&field, c);
        }
    }
    let mut set = FeatureSet::empty(field.descriptors.dim, camera.width, camera.height);
    set.threshold = th;
    let mut positions = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let d = normalized(&field.descriptors.sample(c.position.x, c.position.y));
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        positions.push(c.position);
        set.scores.push(c.score);
        set.descriptors.extend(d);
    }
    set.keypoints = rescale_keypoints(&positions, w, h, camera);
    Ok(set)
}
