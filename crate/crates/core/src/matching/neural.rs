use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{AssignmentMatrix, MatcherBackend, MatcherInput, MatchingError};

fn backend_error(e: impl std::fmt::Display) -> MatchingError {
    MatchingError::Backend(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Keypoints(usize),
    Descriptors(usize),
}

/// Matcher running a serialized LightGlue-style graph.
///
/// Inputs are `kpts0`, `kpts1` (`1 × n × 2`, in `[-1, 1]`) and `desc0`, `desc1`
/// (`1 × n × D`), identified by name or, failing that, in that order. The first
/// output is either a (log-)assignment matrix `1 × M(+1) × N(+1)` or, for graphs
/// that extract matches themselves, `matches0` indices with `mscores0`.
pub struct NeuralMatcher {
    plan: Arc<TypedRunnableModel>,
    slots: Vec<Slot>,
}

impl NeuralMatcher {
    pub fn load(path: &Path) -> Result<Self, MatchingError> {
        let fail = |e: TractError| MatchingError::Backend(format!("{}: {e}", path.display()));
        let model = tract_onnx::onnx().model_for_path(path).map_err(fail)?;
        let names: Vec<String> = model.input_outlets().map_err(fail)?.iter().map(|o| model.node(o.node).name.clone()).collect();
        if names.len() != 4 {
            return Err(MatchingError::Backend(format!("{}: expected 4 inputs, found {}", path.display(), names.len())));
        }
        let slots = input_slots(&names);
        let plan = model.into_typed().and_then(|m| m.into_decluttered()).and_then(|m| m.into_runnable()).map_err(fail)?;
        Ok(Self { plan, slots })
    }
}

fn input_slots(names: &[String]) -> Vec<Slot> {
    let by_name: Vec<Option<Slot>> = names
        .iter()
        .map(|n| {
            let n = n.to_ascii_lowercase();
            let side = if n.ends_with('1') { 1 } else { 0 };
            if n.contains("kpt") || n.contains("keypoint") {
                Some(Slot::Keypoints(side))
            } else if n.contains("desc") {
                Some(Slot::Descriptors(side))
            } else {
                None
            }
        })
        .collect();
    let mut all: Vec<Slot> = by_name.iter().flatten().copied().collect();
    all.sort_by_key(|s| format!("{s:?}"));
    all.dedup();
    if all.len() == 4 {
        by_name.into_iter().flatten().collect()
    } else {
        vec![Slot::Keypoints(0), Slot::Keypoints(1), Slot::Descriptors(0), Slot::Descriptors(1)]
    }
}

fn keypoint_tensor(input: &MatcherInput<'_>) -> Tensor {
    let data: Vec<f32> = input.keypoints.iter().flat_map(|k| [(2.0 * k.x - 1.0) as f32, (2.0 * k.y - 1.0) as f32]).collect();
    tract_ndarray::Array3::from_shape_vec((1, input.len(), 2), data).expect("shape matches data").into()
}

fn descriptor_tensor(input: &MatcherInput<'_>) -> Tensor {
    tract_ndarray::Array3::from_shape_vec((1, input.len(), input.dim), input.descriptors.to_vec())
        .expect("shape matches data")
        .into()
}

/// Scales rows and columns so every sum is at most one.
fn into_partial_assignment(mut p: AssignmentMatrix) -> AssignmentMatrix {
    for v in &mut p.values {
        *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    }
    let rows: Vec<f64> = (0..p.rows).map(|i| p.row_sum(i)).collect();
    let cols: Vec<f64> = (0..p.cols).map(|j| p.col_sum(j)).collect();
    for i in 0..p.rows {
        for j in 0..p.cols {
            let scale = 1f64.max(rows[i]).max(cols[j]);
            p.set(i, j, p.at(i, j) / scale);
        }
    }
    p
}

fn decode(outputs: &[TValue], m: usize, n: usize) -> Result<AssignmentMatrix, MatchingError> {
    let first = outputs.first().ok_or_else(|| MatchingError::Backend("graph has no outputs".into()))?;
    let mut p = AssignmentMatrix::zeros(m, n);
    if first.datum_type() == f32::datum_type() {
        let view = first.to_plain_array_view::<f32>().map_err(backend_error)?;
        let shape = view.shape().to_vec();
        let (rows, cols) = match shape[..] {
            [1, r, c] | [r, c] => (r, c),
            _ => return Err(MatchingError::Backend(format!("unexpected score output shape {shape:?}"))),
        };
        if !(rows == m || rows == m + 1) || !(cols == n || cols == n + 1) {
            return Err(MatchingError::Backend(format!("{rows}x{cols} scores for {m}x{n} features")));
        }
        let view = view.to_shape((rows, cols)).map_err(backend_error)?;
        let log = view.iter().any(|v| *v < 0.0);
        for i in 0..m {
            for j in 0..n {
                let v = view[[i, j]] as f64;
                p.set(i, j, if log { v.exp() } else { v });
            }
        }
        return Ok(into_partial_assignment(p));
    }
    let indices = first.cast_to::<i64>().map_err(backend_error)?;
    let indices: Vec<i64> = indices.to_plain_array_view::<i64>().map_err(backend_error)?.iter().copied().collect();
    let scores = match outputs.get(1) {
        Some(s) => {
            let s = s.cast_to::<f32>().map_err(backend_error)?;
            let view = s.to_plain_array_view::<f32>().map_err(backend_error)?;
            view.iter().copied().collect()
        }
        None => Vec::new(),
    };
    let score = |k: usize| scores.get(k).map_or(1.0, |&s| s as f64);
    let shape = first.shape().to_vec();
    if shape.last() == Some(&2) && shape.len() >= 2 {
        for (k, pair) in indices.chunks_exact(2).enumerate() {
            let (i, j) = (pair[0], pair[1]);
            if (0..m as i64).contains(&i) && (0..n as i64).contains(&j) {
                p.set(i as usize, j as usize, score(k));
            }
        }
    } else if indices.len() == m {
        for (i, &j) in indices.iter().enumerate() {
            if (0..n as i64).contains(&j) {
                p.set(i, j as usize, score(i));
            }
        }
    } else {
        return Err(MatchingError::Backend(format!("unexpected match output shape {shape:?}")));
    }
    Ok(into_partial_assignment(p))
}

impl MatcherBackend for NeuralMatcher {
    fn name(&self) -> &str {
        "neural"
    }

    fn assign(&mut self, a: &MatcherInput<'_>, b: &MatcherInput<'_>) -> Result<AssignmentMatrix, MatchingError> {
        if a.dim != b.dim {
            return Err(MatchingError::DimensionMismatch { a: a.dim, b: b.dim });
        }
        if a.is_empty() || b.is_empty() {
            return Ok(AssignmentMatrix::zeros(a.len(), b.len()));
        }
        let inputs: TVec<TValue> = self
            .slots
            .iter()
            .map(|slot| {
                match *slot {
                    Slot::Keypoints(0) => keypoint_tensor(a),
                    Slot::Keypoints(_) => keypoint_tensor(b),
                    Slot::Descriptors(0) => descriptor_tensor(a),
                    Slot::Descriptors(_) => descriptor_tensor(b),
                }
                .into()
            })
            .collect();
        let outputs = self.plan.run(inputs).map_err(backend_error)?;
        decode(&outputs, a.len(), b.len())
    }
}
