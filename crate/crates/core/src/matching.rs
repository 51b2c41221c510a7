//! Soft partial assignment between two feature sets and its hardening into
//! one-to-one correspondences.

#[cfg(feature = "onnx")]
mod neural;

use std::collections::HashMap;

use nalgebra::Vector2;
use thiserror::Error;

use crate::features::{dot, FeatureSet};

#[cfg(feature = "onnx")]
pub use neural::NeuralMatcher;

/// Default confidence floor for [`extract_matches`].
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("matcher backend failed: {0}")]
    Backend(String),
    #[error("descriptor lengths differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
}

/// Match likelihoods `p_ij` between `rows` features of A and `cols` of B.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl AssignmentMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[i * self.cols..(i + 1) * self.cols].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.at(i, j)).sum()
    }

    pub fn transpose(&self) -> AssignmentMatrix {
        let mut t = AssignmentMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    /// Entries in `[0, 1]`, row and column sums at most one.
    pub fn is_partial_assignment(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
            && (0..self.rows).all(|i| self.row_sum(i) <= 1.0 + 1e-6)
            && (0..self.cols).all(|j| self.col_sum(j) <= 1.0 + 1e-6)
    }
}

/// Hard correspondences `(index in A, index in B, confidence)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize, f64)>,
    pub provenance: String,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Swaps the roles of A and B, ordered by the new A index.
    pub fn transposed(&self) -> MatchSet {
        let mut pairs: Vec<_> = self.pairs.iter().map(|&(a, b, c)| (b, a, c)).collect();
        pairs.sort_by_key(|p| p.0);
        MatchSet { pairs, provenance: self.provenance.clone() }
    }
}

/// Keypoints normalised to `[0, 1]²` with their descriptors.
#[derive(Clone, Copy, Debug)]
pub struct MatcherInput<'a> {
    pub keypoints: &'a [Vector2<f64>],
    /// Row-major `len × dim`, unit rows.
    pub descriptors: &'a [f32],
    pub dim: usize,
}

impl MatcherInput<'_> {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }
}

pub trait MatcherBackend: Send {
    fn name(&self) -> &str;
    fn assign(&mut self, a: &MatcherInput<'_>, b: &MatcherInput<'_>) -> Result<AssignmentMatrix, MatchingError>;
}

/// Test oracle: `p_ij = max(0, cos)² / max(1, row sum, column sum)` of the
/// squared similarities, which keeps every row and column sum at most one.
#[derive(Clone, Copy, Debug, Default)]
pub struct BruteForceMatcher;

impl MatcherBackend for BruteForceMatcher {
    fn name(&self) -> &str {
        "brute-force"
    }

    fn assign(&mut self, a: &MatcherInput<'_>, b: &MatcherInput<'_>) -> Result<AssignmentMatrix, MatchingError> {
        let (m, n) = (a.len(), b.len());
        let mut p = AssignmentMatrix::zeros(m, n);
        let mut row = vec![0.0; m];
        let mut col = vec![0.0; n];
        for i in 0..m {
            let da = a.descriptor(i);
            for j in 0..n {
                let c = dot(da, b.descriptor(j)).max(0.0) as f64;
                let s = (c * c).min(1.0);
                p.values[i * n + j] = s;
                row[i] += s;
                col[j] += s;
            }
        }
        for i in 0..m {
            for j in 0..n {
                p.values[i * n + j] /= 1f64.max(row[i]).max(col[j]);
            }
        }
        Ok(p)
    }
}

/// Runs `backend` on two feature sets; empty sets give an empty matrix.
pub fn match_features(
    backend: &mut dyn MatcherBackend,
    a: &FeatureSet,
    b: &FeatureSet,
) -> Result<AssignmentMatrix, MatchingError> {
    if a.dim != b.dim {
        return Err(MatchingError::DimensionMismatch { a: a.dim, b: b.dim });
    }
    if a.is_empty() || b.is_empty() {
        return Ok(AssignmentMatrix::zeros(a.len(), b.len()));
    }
    let ka = a.normalized_keypoints();
    let kb = b.normalized_keypoints();
    let ia = MatcherInput { keypoints: &ka, descriptors: &a.descriptors, dim: a.dim };
    let ib = MatcherInput { keypoints: &kb, descriptors: &b.descriptors, dim: b.dim };
    let p = backend.assign(&ia, &ib)?;
    if p.rows != a.len() || p.cols != b.len() {
        return Err(MatchingError::Backend(format!(
            "{} returned {}x{}, expected {}x{}",
            backend.name(),
            p.rows,
            p.cols,
            a.len(),
            b.len()
        )));
    }
    Ok(p)
}

/// Mutual-best pairs with `p_ij ≥ min_confidence` and `p_ij > 0`; ties go to
/// the lower index.
pub fn extract_matches(p: &AssignmentMatrix, min_confidence: f64) -> MatchSet {
    let mut row_best = vec![(usize::MAX, f64::NEG_INFINITY); p.rows];
    let mut col_best = vec![(usize::MAX, f64::NEG_INFINITY); p.cols];
    for i in 0..p.rows {
        for j in 0..p.cols {
            let v = p.at(i, j);
            if v > row_best[i].1 {
                row_best[i] = (j, v);
            }
            if v > col_best[j].1 {
                col_best[j] = (i, v);
            }
        }
    }
    let pairs = row_best
        .iter()
        .enumerate()
        .filter_map(|(i, &(j, v))| {
            (j != usize::MAX && col_best[j].0 == i && v >= min_confidence && v > 0.0).then_some((i, j, v))
        })
        .collect();
    MatchSet { pairs, provenance: String::new() }
}

/// [`match_features`] followed by [`extract_matches`], tagged with the
/// backend name.
pub fn match_sets(
    backend: &mut dyn MatcherBackend,
    a: &FeatureSet,
    b: &FeatureSet,
    min_confidence: f64,
) -> Result<MatchSet, MatchingError> {
    let p = match_features(backend, a, b)?;
    let mut set = extract_matches(&p, min_confidence);
    set.provenance = backend.name().to_string();
    Ok(set)
}

/// Guided matching: each A-feature with a prediction looks only at
/// B-features strictly closer than `radius` pixels and takes the most similar
/// one with cosine at least `min_similarity`. Conflicts on a B-feature keep the
/// more similar A-feature.
pub fn match_with_prior(
    a: &FeatureSet,
    b: &FeatureSet,
    predictions: &[Option<Vector2<f64>>],
    radius: f64,
    min_similarity: f64,
) -> MatchSet {
    assert_eq!(predictions.len(), a.len(), "one prediction per A-feature");
    let provenance = "prior-window".to_string();
    if radius <= 0.0 || b.is_empty() || a.dim != b.dim {
        return MatchSet { pairs: Vec::new(), provenance };
    }
    let cell = radius.max(1.0);
    let key = |p: &Vector2<f64>| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, k) in b.keypoints.iter().enumerate() {
        grid.entry(key(k)).or_default().push(j);
    }
    let mut claimed: HashMap<usize, (usize, f64)> = HashMap::new();
    for (i, pred) in predictions.iter().enumerate() {
        let Some(pred) = pred else { continue };
        let (cx, cy) = key(pred);
        let mut best: Option<(usize, f64)> = None;
        for gy in cy - 1..=cy + 1 {
            for gx in cx - 1..=cx + 1 {
                let Some(cands) = grid.get(&(gx, gy)) else { continue };
                for &j in cands {
                    if (b.keypoints[j] - pred).norm() >= radius {
                        continue;
                    }
                    let s = dot(a.descriptor(i), b.descriptor(j)) as f64;
                    if s >= min_similarity && best.is_none_or(|(bj, bs)| s > bs || (s == bs && j < bj)) {
                        best = Some((j, s));
                    }
                }
            }
        }
        if let Some((j, s)) = best {
            match claimed.get(&j) {
                Some(&(_, prev)) if prev >= s => {}
                _ => {
                    claimed.insert(j, (i, s));
                }
            }
        }
    }
    let mut pairs: Vec<_> = claimed.into_iter().map(|(j, (i, s))| (i, j, s.clamp(0.0, 1.0))).collect();
    pairs.sort_by_key(|p| p.0);
    MatchSet { pairs, provenance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, dim: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = FeatureSet::empty(dim, 640, 480);
        for _ in 0..n {
            let d: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            set.push(Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)), 0.8, &d);
        }
        set
    }

    fn one_hot_set(n: usize) -> FeatureSet {
        let mut set = FeatureSet::empty(n, 100, 100);
        for i in 0..n {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            set.push(Vector2::new(i as f64, i as f64), 0.9, &d);
        }
        set
    }

    /// Cosine-similarity oracle computed in f64 from scratch.
    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let ab: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let aa: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
        let bb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum();
        ab / (aa.sqrt() * bb.sqrt())
    }

    fn brute_mutual_best(p: &AssignmentMatrix, min: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..p.rows {
            for j in 0..p.cols {
                let v = p.at(i, j);
                let row_max = (0..p.cols).all(|k| p.at(i, k) < v || (p.at(i, k) == v && k >= j));
                let col_max = (0..p.rows).all(|k| p.at(k, j) < v || (p.at(k, j) == v && k >= i));
                if row_max && col_max && v >= min && v > 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn self_match_is_diagonally_dominant() {
        let set = one_hot_set(6);
        let p = match_features(&mut BruteForceMatcher, &set, &set).unwrap();
        for i in 0..6 {
            let oracle = cosine(set.descriptor(i), set.descriptor(i)).max(0.0).powi(2);
            assert!((p.at(i, i) - oracle).abs() < 1e-6);
            for j in 0..6 {
                if j != i {
                    assert!(p.at(i, i) > p.at(i, j));
                }
            }
        }
        assert!(p.is_partial_assignment());
    }

    #[test]
    fn orthogonal_sets_produce_no_matches() {
        let mut a = FeatureSet::empty(4, 10, 10);
        let mut b = FeatureSet::empty(4, 10, 10);
        a.push(Vector2::new(1.0, 1.0), 0.9, &[1.0, 0.0, 0.0, 0.0]);
        a.push(Vector2::new(2.0, 1.0), 0.9, &[0.0, 1.0, 0.0, 0.0]);
        b.push(Vector2::new(1.0, 1.0), 0.9, &[0.0, 0.0, 1.0, 0.0]);
        b.push(Vector2::new(2.0, 1.0), 0.9, &[0.0, 0.0, 0.0, 1.0]);
        let p = match_features(&mut BruteForceMatcher, &a, &b).unwrap();
        assert!(p.values.iter().all(|&v| v < DEFAULT_MIN_CONFIDENCE));
        assert!(extract_matches(&p, DEFAULT_MIN_CONFIDENCE).is_empty());
    }

    #[test]
    fn singleton_identical_descriptor() {
        let set = random_set(1, 16, 1);
        let p = match_features(&mut BruteForceMatcher, &set, &set).unwrap();
        assert!(p.at(0, 0) >= 0.9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = match_features(&mut BruteForceMatcher, &random_set(2, 8, 1), &random_set(2, 16, 2)).unwrap_err();
        assert_eq!(err, MatchingError::DimensionMismatch { a: 8, b: 16 });
    }

    #[test]
    fn identity_like_matrix_gives_diagonal() {
        let n = 5;
        let mut p = AssignmentMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                p.set(i, j, if i == j { 0.9 } else { 0.01 });
            }
        }
        let m = extract_matches(&p, 0.5);
        assert_eq!(m.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), (0..n).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn shared_best_column_keeps_higher_row() {
        let p = AssignmentMatrix { rows: 2, cols: 2, values: vec![0.6, 0.1, 0.7, 0.2] };
        let m = extract_matches(&p, 0.1);
        assert_eq!(m.pairs, vec![(1, 0, 0.7)]);
    }

    #[test]
    fn exact_priors_agree_with_unrestricted_matching() {
        let a = random_set(40, 32, 5);
        let perm: Vec<usize> = (0..40).rev().collect();
        let b = a.subset(&perm);
        let full = match_sets(&mut BruteForceMatcher, &a, &b, DEFAULT_MIN_CONFIDENCE).unwrap();
        let preds: Vec<_> = a.keypoints.iter().map(|k| Some(*k)).collect();
        let guided = match_with_prior(&a, &b, &preds, 5.0, 0.9);
        let strip = |m: &MatchSet| m.pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>();
        assert_eq!(strip(&full), strip(&guided));
        assert_eq!(guided.len(), 40);
    }

    #[test]
    fn zero_radius_or_displaced_priors_are_empty() {
        let a = random_set(10, 16, 6);
        let preds: Vec<_> = a.keypoints.iter().map(|k| Some(*k)).collect();
        assert!(match_with_prior(&a, &a, &preds, 0.0, 0.5).is_empty());
        let shifted: Vec<_> = a.keypoints.iter().map(|k| Some(k + Vector2::new(1000.0, 0.0))).collect();
        assert!(match_with_prior(&a, &a, &shifted, 5.0, 0.5).is_empty());
    }

    proptest! {
        #[test]
        fn extraction_equals_exhaustive_scan(seed in 0u64..500, m in 1usize..12, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = AssignmentMatrix::zeros(m, n);
            for v in &mut p.values {
                *v = rng.random_range(0.0..1.0);
            }
            let rs: Vec<f64> = (0..m).map(|i| p.row_sum(i)).collect();
            let cs: Vec<f64> = (0..n).map(|j| p.col_sum(j)).collect();
            for i in 0..m {
                for j in 0..n {
                    let v = p.at(i, j) / rs[i].max(cs[j]).max(1.0);
                    p.set(i, j, v);
                }
            }
            prop_assert!(p.is_partial_assignment());
            let got: Vec<(usize, usize)> = extract_matches(&p, 0.05).pairs.iter().map(|x| (x.0, x.1)).collect();
            prop_assert_eq!(got, brute_mutual_best(&p, 0.05));
        }

        #[test]
        fn swap_transposes_matches(seed in 0u64..200) {
            let a = random_set(15, 16, seed);
            let mut b = random_set(12, 16, seed + 1000);
            b.descriptors[..16 * 5].copy_from_slice(&a.descriptors[..16 * 5]);
            let ab = match_sets(&mut BruteForceMatcher, &a, &b, 0.05).unwrap();
            let ba = match_sets(&mut BruteForceMatcher, &b, &a, 0.05).unwrap();
            prop_assert_eq!(ab.transposed(), ba);
            let p = match_features(&mut BruteForceMatcher, &a, &b).unwrap();
            prop_assert!(p.is_partial_assignment());
        }

        #[test]
        fn permutation_is_recovered(seed in 0u64..200, n in 2usize..30) {
            let a = random_set(n, 24, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
            let b = a.subset(&perm);
            let m = match_sets(&mut BruteForceMatcher, &a, &b, 0.0).unwrap();
            prop_assert_eq!(m.len(), n);
            for &(i, j, _) in &m.pairs {
                prop_assert_eq!(perm[j], i);
            }
            let mut seen_b: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
            seen_b.sort();
            seen_b.dedup();
            prop_assert_eq!(seen_b.len(), m.len());
        }
    }
}
