use std::sync::Arc;

use super::render::{render_frame, render_right_frame};
use super::SyntheticScene;
use crate::features::{DescriptorGrid, DetectorBackend, DetectorInput, FeatureError, ScoreField};

/// Which camera of the rig a [`SyntheticDetector`] renders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraSide {
    Left,
    Right,
}

/// Detector backend for synthetic frame indices: every rendered feature
/// becomes a Gaussian blob of its confidence on a low background, with its
/// descriptor stored at the peak cell.
#[derive(Clone, Debug)]
pub struct SyntheticDetector {
    scene: Arc<SyntheticScene>,
    side: CameraSide,
    /// Blob standard deviation in score cells.
    pub blob_sigma: f64,
    pub background: f64,
    /// Blobs whose peak cells are this close (Chebyshev) to a stronger blob
    /// are dropped, as the detector could not separate them.
    pub separation: usize,
}

impl SyntheticDetector {
    pub fn new(scene: Arc<SyntheticScene>, side: CameraSide) -> Self {
        Self { scene, side, blob_sigma: 1.0, background: 0.01, separation: 4 }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }

    /// Score field for `frame` at `width × height` cells.
    pub fn render_field(&self, frame: usize, width: usize, height: usize) -> Result<ScoreField, FeatureError> {
        if frame >= self.scene.poses.len() {
            return Err(FeatureError::Backend(format!(
                "frame {frame} outside a {}-frame scene",
                self.scene.poses.len()
            )));
        }
        let rendered = match self.side {
            CameraSide::Left => render_frame(&self.scene, frame),
            CameraSide::Right => render_right_frame(&self.scene, frame),
        };
        let f = &rendered.features;
        let cam = self.scene.camera();
        let sx = width as f64 / cam.width as f64;
        let sy = height as f64 / cam.height as f64;
        let mut order: Vec<usize> = (0..f.len()).collect();
        order.sort_by(|&a, &b| f.scores[b].total_cmp(&f.scores[a]).then(a.cmp(&b)));
        let mut scores = vec![self.background; width * height];
        let mut peaks = vec![false; width * height];
        let mut grid = DescriptorGrid::sparse(width, height, f.dim, 1.0);
        let support = (3.0 * self.blob_sigma).ceil() as i64;
        let reach = self.separation as i64;
        let margin = 2i64;
        for i in order {
            if f.scores[i] <= self.background {
                continue;
            }
            let (gx, gy) = (f.keypoints[i].x * sx, f.keypoints[i].y * sy);
            let (px, py) = (gx.round() as i64, gy.round() as i64);
            if px < margin || py < margin || px >= width as i64 - margin || py >= height as i64 - margin {
                continue;
            }
            let crowded = (py - reach..=py + reach).any(|y| {
                (px - reach..=px + reach).any(|x| {
                    x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && peaks[y as usize * width + x as usize]
                })
            });
            if crowded {
                continue;
            }
            peaks[py as usize * width + px as usize] = true;
            let two_s2 = 2.0 * self.blob_sigma * self.blob_sigma;
            for y in (py - support).max(0)..=(py + support).min(height as i64 - 1) {
                for x in (px - support).max(0)..=(px + support).min(width as i64 - 1) {
                    let d2 = (x as f64 - gx).powi(2) + (y as f64 - gy).powi(2);
                    let v = f.scores[i] * (-d2 / two_s2).exp();
                    let cell = &mut scores[y as usize * width + x as usize];
                    *cell = cell.max(v);
                }
            }
            grid.set(px as u32, py as u32, f.descriptor(i).to_vec())?;
        }
        ScoreField::new(width, height, scores, grid)
    }
}

impl DetectorBackend for SyntheticDetector {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn infer(&mut self, input: DetectorInput<'_>, width: usize, height: usize) -> Result<ScoreField, FeatureError> {
        match input {
            DetectorInput::Synthetic(frame) => self.render_field(frame, width, height),
            other => Err(FeatureError::UnsupportedInput { backend: self.name().to_string(), input: other.kind() }),
        }
    }
}
