use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{DescriptorGrid, DetectorBackend, DetectorInput, FeatureError, ScoreField};

/// Cell size of the detector's coarse outputs.
const CELL: usize = 8;

fn backend_error(e: impl std::fmt::Display) -> FeatureError {
    FeatureError::Backend(e.to_string())
}

/// Detector running a serialized SuperPoint-style graph.
///
/// The graph takes a `1 × 1 × H × W` image in `[0, 1]` and returns either
/// `65`-channel cell logits (64 pixel bins plus a dustbin) or a dense score map,
/// followed by a `1 × D × H/8 × W/8` descriptor map. Inputs are zero-padded to a
/// multiple of 8 and the outputs cropped back.
pub struct NeuralDetector {
    path: PathBuf,
    model: InferenceModel,
    plans: HashMap<(usize, usize), Arc<TypedRunnableModel>>,
}

impl NeuralDetector {
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| FeatureError::Backend(format!("{}: {e}", path.display())))?;
        if model.outputs.len() < 2 {
            return Err(FeatureError::Backend(format!(
                "{}: expected score and descriptor outputs, found {}",
                path.display(),
                model.outputs.len()
            )));
        }
        Ok(Self { path: path.to_path_buf(), model, plans: HashMap::new() })
    }

    fn plan(&mut self, width: usize, height: usize) -> Result<Arc<TypedRunnableModel>, FeatureError> {
        if let Some(p) = self.plans.get(&(width, height)) {
            return Ok(p.clone());
        }
        let plan = self
            .model
            .clone()
            .with_input_fact(0, f32::fact([1, 1, height, width]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| FeatureError::Backend(format!("{}: {e}", self.path.display())))?;
        self.plans.insert((width, height), plan.clone());
        Ok(plan)
    }
}

impl DetectorBackend for NeuralDetector {
    fn name(&self) -> &str {
        "neural"
    }

    fn infer(&mut self, input: DetectorInput<'_>, width: usize, height: usize) -> Result<ScoreField, FeatureError> {
        let DetectorInput::Image(image) = input else {
            return Err(FeatureError::UnsupportedInput { backend: "neural".into(), input: input.kind() });
        };
        if image.width != width || image.height != height {
            return Err(FeatureError::Image(format!(
                "{}x{} image for a {width}x{height} detector input",
                image.width, image.height
            )));
        }
        let wp = width.div_ceil(CELL) * CELL;
        let hp = height.div_ceil(CELL) * CELL;
        let mut padded = tract_ndarray::Array4::<f32>::zeros((1, 1, hp, wp));
        for y in 0..height {
            for x in 0..width {
                padded[[0, 0, y, x]] = image.at(x, y);
            }
        }
        let plan = self.plan(wp, hp)?;
        let outputs = plan.run(tvec!(Tensor::from(padded).into())).map_err(backend_error)?;
        let scores = decode_scores(&outputs[0], wp, hp)?;
        let descriptors = decode_descriptors(&outputs[1], wp, hp)?;

        let mut cropped = Vec::with_capacity(width * height);
        for y in 0..height {
            cropped.extend(scores[y * wp..y * wp + width].iter().map(|&s| (s as f64).clamp(0.0, 1.0)));
        }
        ScoreField::new(width, height, cropped, descriptors)
    }
}

/// Dense `hp × wp` scores from cell logits or a score map.
fn decode_scores(value: &TValue, wp: usize, hp: usize) -> Result<Vec<f32>, FeatureError> {
    let view = value.to_plain_array_view::<f32>().map_err(backend_error)?;
    let shape = view.shape().to_vec();
    let (hc, wc) = (hp / CELL, wp / CELL);
    match shape.as_slice() {
        [1, 65, h, w] if (*h, *w) == (hc, wc) => {
            let mut out = vec![0.0f32; wp * hp];
            for cy in 0..hc {
                for cx in 0..wc {
                    let logits: Vec<f32> = (0..65).map(|c| view[[0, c, cy, cx]]).collect();
                    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let exp: Vec<f32> = logits.iter().map(|l| (l - max).exp()).collect();
                    let sum: f32 = exp.iter().sum();
                    for (c, e) in exp.iter().take(64).enumerate() {
                        let (x, y) = (cx * CELL + c % CELL, cy * CELL + c / CELL);
                        out[y * wp + x] = e / sum;
                    }
                }
            }
            Ok(out)
        }
        [1, h, w] | [1, 1, h, w] if (*h, *w) == (hp, wp) => Ok(view.iter().copied().collect()),
        _ => Err(FeatureError::Backend(format!("unexpected score output shape {shape:?}"))),
    }
}

/// Descriptor grid in height × width × dim order.
fn decode_descriptors(value: &TValue, wp: usize, hp: usize) -> Result<DescriptorGrid, FeatureError> {
    let view = value.to_plain_array_view::<f32>().map_err(backend_error)?;
    let shape = view.shape().to_vec();
    let [1, dim, h, w] = shape[..] else {
        return Err(FeatureError::Backend(format!("unexpected descriptor output shape {shape:?}")));
    };
    if h == 0 || w == 0 || hp % h != 0 || wp / w != hp / h {
        return Err(FeatureError::Backend(format!("descriptor map {w}x{h} does not tile a {wp}x{hp} input")));
    }
    let mut data = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            data.extend((0..dim).map(|c| view[[0, c, y, x]]));
        }
    }
    DescriptorGrid::dense(w, h, dim, (hp / h) as f64, data)
}
