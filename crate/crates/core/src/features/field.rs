use std::collections::HashMap;

use super::FeatureError;

/// Descriptor storage behind a [`DescriptorGrid`].
#[derive(Clone, Debug, PartialEq)]
pub enum GridStorage {
    /// Row-major `height × width × dim`.
    Dense(Vec<f32>),
    /// Only the listed cells are non-zero.
    Sparse(HashMap<(u32, u32), Vec<f32>>),
}

/// Dense descriptor map at `1 / stride` of the score resolution.
///
/// Score pixel `x` sits at grid coordinate `(x + 0.5) / stride - 0.5`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorGrid {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub stride: f64,
    pub storage: GridStorage,
}

fn cubic_weight(t: f64) -> f64 {
    // Catmull-Rom (a = -0.5)
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

impl DescriptorGrid {
    pub fn dense(width: usize, height: usize, dim: usize, stride: f64, data: Vec<f32>) -> Result<Self, FeatureError> {
        if data.len() != width * height * dim {
            return Err(FeatureError::InvalidField(format!(
                "descriptor buffer has {} values, expected {}",
                data.len(),
                width * height * dim
            )));
        }
        Ok(Self { width, height, dim, stride, storage: GridStorage::Dense(data) })
    }

    pub fn sparse(width: usize, height: usize, dim: usize, stride: f64) -> Self {
        Self { width, height, dim, stride, storage: GridStorage::Sparse(HashMap::new()) }
    }

    /// Writes one cell of a sparse grid.
    pub fn set(&mut self, x: u32, y: u32, descriptor: Vec<f32>) -> Result<(), FeatureError> {
        if descriptor.len() != self.dim {
            return Err(FeatureError::InvalidField(format!(
                "descriptor of length {} in grid of dimension {}",
                descriptor.len(),
                self.dim
            )));
        }
        match &mut self.storage {
            GridStorage::Sparse(cells) => {
                cells.insert((x, y), descriptor);
            }
            GridStorage::Dense(data) => {
                let base = (y as usize * self.width + x as usize) * self.dim;
                data[base..base + self.dim].copy_from_slice(&descriptor);
            }
        }
        Ok(())
    }

    pub fn cell(&self, x: usize, y: usize) -> Option<&[f32]> {
        match &self.storage {
            GridStorage::Dense(data) => {
                let base = (y * self.width + x) * self.dim;
                Some(&data[base..base + self.dim])
            }
            GridStorage::Sparse(cells) => cells.get(&(x as u32, y as u32)).map(Vec::as_slice),
        }
    }

    /// Bicubic sample at a score-resolution position (not normalised).
    pub fn sample(&self, x: f64, y: f64) -> Vec<f32> {
        let gx = (x + 0.5) / self.stride - 0.5;
        let gy = (y + 0.5) / self.stride - 0.5;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let mut acc = vec![0.0f64; self.dim];
        for j in -1..=2 {
            let cy = y0 + j as f64;
            let wy = cubic_weight(gy - cy);
            if wy == 0.0 {
                continue;
            }
            let iy = (cy as i64).clamp(0, self.height as i64 - 1) as usize;
            for i in -1..=2 {
                let cx = x0 + i as f64;
                let wx = cubic_weight(gx - cx);
                if wx == 0.0 {
                    continue;
                }
                let ix = (cx as i64).clamp(0, self.width as i64 - 1) as usize;
                if let Some(d) = self.cell(ix, iy) {
                    let w = wx * wy;
                    for (a, v) in acc.iter_mut().zip(d) {
                        *a += w * *v as f64;
                    }
                }
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    }
}

/// Detector output at the network input resolution `W′ × H′`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreField {
    pub width: usize,
    pub height: usize,
    /// Row-major confidences in `[0, 1]`.
    pub scores: Vec<f64>,
    pub descriptors: DescriptorGrid,
}

impl ScoreField {
    pub fn new(width: usize, height: usize, scores: Vec<f64>, descriptors: DescriptorGrid) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 || scores.len() != width * height {
            return Err(FeatureError::InvalidField(format!(
                "score buffer of {} for a {width}x{height} field",
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(FeatureError::InvalidField(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, scores, descriptors })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.width + x]
    }
}
