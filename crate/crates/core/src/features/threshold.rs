//! Adaptive confidence threshold, score filtering and keypoint rescaling.

use nalgebra::Vector2;

use super::{FeatureError, ScoreField};
use crate::geometry::PinholeCamera;

/// Hyperparameters and inter-frame memory of the adaptive threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveThresholdState {
    pub mu1: f64,
    pub mu2: f64,
    /// Matches between the previous frame and its neighbour.
    pub last_match_count: usize,
    pub resize_width: usize,
    pub resize_height: usize,
}

impl Default for AdaptiveThresholdState {
    fn default() -> Self {
        Self { mu1: 0.1, mu2: 0.01, last_match_count: 0, resize_width: 400, resize_height: 300 }
    }
}

impl AdaptiveThresholdState {
    pub fn new(mu1: f64, mu2: f64, resize_width: usize, resize_height: usize) -> Result<Self, FeatureError> {
        if !(mu1 >= 0.0 && mu1.is_finite()) {
            return Err(FeatureError::InvalidParameter(format!("mu1 must be >= 0, got {mu1}")));
        }
        if !(mu2 > 0.0 && mu2.is_finite()) {
            return Err(FeatureError::InvalidParameter(format!("mu2 must be > 0, got {mu2}")));
        }
        if resize_width == 0 || resize_height == 0 {
            return Err(FeatureError::InvalidParameter("resize dimensions must be positive".into()));
        }
        Ok(Self { mu1, mu2, last_match_count: 0, resize_width, resize_height })
    }
}

/// Mean and population variance of all scores in the field.
pub fn score_statistics(field: &ScoreField) -> (f64, f64) {
    let n = field.scores.len() as f64;
    let mean = field.scores.iter().sum::<f64>() / n;
    let var = field.scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `E + √σ² / 2 + μ1 · sigmoid(μ2 · m)` over the field's score distribution.
pub fn compute_adaptive_threshold(field: &ScoreField, state: &AdaptiveThresholdState) -> f64 {
    let (mean, var) = score_statistics(field);
    let sigmoid = 1.0 / (1.0 + (-state.mu2 * state.last_match_count as f64).exp());
    mean + var.sqrt() / 2.0 + state.mu1 * sigmoid
}

/// A detection at integer score-grid coordinates, optionally refined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub x: usize,
    pub y: usize,
    pub score: f64,
    /// Sub-cell position (equals `(x, y)` until refined).
    pub position: Vector2<f64>,
}

/// Every cell whose score strictly exceeds `th`, in row-major order.
pub fn threshold_cells(field: &ScoreField, th: f64) -> Vec<Candidate> {
    let mut out = Vec::new();
    for y in 0..field.height {
        for x in 0..field.width {
            let s = field.at(x, y);
            if s > th {
                out.push(Candidate { x, y, score: s, position: Vector2::new(x as f64, y as f64) });
            }
        }
    }
    out
}

/// Greedy non-maximum suppression: strongest first, each kept detection
/// blocks every cell within `radius` (Chebyshev) of it.
pub fn suppress(mut candidates: Vec<Candidate>, radius: usize, width: usize, height: usize) -> Vec<Candidate> {
    if radius == 0 {
        return candidates;
    }
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    let mut blocked = vec![false; width * height];
    let mut kept = Vec::new();
    for c in candidates {
        if blocked[c.y * width + c.x] {
            continue;
        }
        let y0 = c.y.saturating_sub(radius);
        let y1 = (c.y + radius).min(height - 1);
        let x0 = c.x.saturating_sub(radius);
        let x1 = (c.x + radius).min(width - 1);
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                blocked[yy * width + xx] = true;
            }
        }
        kept.push(c);
    }
    kept
}

/// Thresholds the field strictly at `th` and applies non-maximum suppression.
pub fn filter_scores(field: &ScoreField, th: f64, nms_radius: usize) -> Vec<Candidate> {
    suppress(threshold_cells(field, th), nms_radius, field.width, field.height)
}

fn log_parabola_offset(left: f64, centre: f64, right: f64) -> f64 {
    if left <= 0.0 || centre <= 0.0 || right <= 0.0 {
        return 0.0;
    }
    let (l, c, r) = (left.ln(), centre.ln(), right.ln());
    let curvature = l - 2.0 * c + r;
    if curvature >= -1e-12 {
        return 0.0;
    }
    (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
}

/// Sub-cell peak location from a parabola fitted to the log-scores of the
/// two axis neighbours (exact for Gaussian-shaped responses).
pub fn refine_subpixel(field: &ScoreField, candidate: &mut Candidate) {
    let (x, y) = (candidate.x, candidate.y);
    let s = field.at(x, y);
    let dx = if x > 0 && x + 1 < field.width {
        log_parabola_offset(field.at(x - 1, y), s, field.at(x + 1, y))
    } else {
        0.0
    };
    let dy = if y > 0 && y + 1 < field.height {
        log_parabola_offset(field.at(x, y - 1), s, field.at(x, y + 1))
    } else {
        0.0
    };
    candidate.position = Vector2::new(x as f64 + dx, y as f64 + dy);
}

/// Maps score-grid coordinates to the original image: `x · W/W′`, `y · H/H′`,
/// clamped to the image.
pub fn rescale_keypoints(
    keypoints: &[Vector2<f64>],
    resize_width: usize,
    resize_height: usize,
    camera: &PinholeCamera,
) -> Vec<Vector2<f64>> {
    let sx = camera.width as f64 / resize_width as f64;
    let sy = camera.height as f64 / resize_height as f64;
    let max_x = camera.width as f64 - 1.0;
    let max_y = camera.height as f64 - 1.0;
    keypoints
        .iter()
        .map(|k| Vector2::new((k.x * sx).clamp(0.0, max_x), (k.y * sy).clamp(0.0, max_y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DescriptorGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(width: usize, height: usize, scores: Vec<f64>) -> ScoreField {
        ScoreField::new(width, height, scores, DescriptorGrid::sparse(width, height, 4, 1.0)).unwrap()
    }

    fn state(mu1: f64, m: usize) -> AdaptiveThresholdState {
        AdaptiveThresholdState { mu1, last_match_count: m, ..Default::default() }
    }

    #[test]
    fn uniform_field_without_sigmoid_weight() {
        let f = field(10, 10, vec![0.5; 100]);
        assert_eq!(compute_adaptive_threshold(&f, &state(0.0, 0)), 0.5);
    }

    #[test]
    fn uniform_field_with_zero_matches() {
        let f = field(10, 10, vec![0.5; 100]);
        let th = compute_adaptive_threshold(&f, &state(0.2, 0));
        assert!((th - 0.6).abs() < 1e-15);
    }

    #[test]
    fn saturated_sigmoid_against_direct_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..400 * 300).map(|_| rng.random::<f64>()).collect();
        // Oracle: textbook two-pass mean and variance.
        let n = scores.len() as f64;
        let mut mean = 0.0;
        for s in &scores {
            mean += s;
        }
        mean /= n;
        let mut var = 0.0;
        for s in &scores {
            var += (s - mean).powi(2);
        }
        var /= n;
        let expected = mean + var.sqrt() / 2.0 + 0.2;
        let f = field(400, 300, scores);
        let th = compute_adaptive_threshold(&f, &state(0.2, 1_000_000));
        assert!((th - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_result_for_zero_field() {
        let f = field(8, 8, vec![0.0; 64]);
        assert!(filter_scores(&f, 0.1, 4).is_empty());
    }

    #[test]
    fn single_spike_is_kept() {
        let mut s = vec![0.0; 64];
        s[3 * 8 + 5] = 0.9;
        let got = filter_scores(&field(8, 8, s), 0.5, 4);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].x, got[0].y), (5, 3));
    }

    #[test]
    fn strict_inequality_at_threshold() {
        let f = field(4, 1, vec![0.2, 0.5, 0.5, 0.7]);
        let got = threshold_cells(&f, 0.5);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].x, 3);
    }

    #[test]
    fn median_threshold_count_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..60 * 40).map(|_| rng.random::<f64>()).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let brute = scores.iter().filter(|&&s| s > median).count();
        let f = field(60, 40, scores);
        assert_eq!(threshold_cells(&f, median).len(), brute);
        let kept = filter_scores(&f, median, 4);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                assert!(a.x.abs_diff(b.x) > 4 || a.y.abs_diff(b.y) > 4);
            }
        }
    }

    #[test]
    fn subpixel_recovers_gaussian_peak() {
        let (w, h) = (21, 21);
        let (cx, cy, sigma) = (10.3, 9.8, 1.0);
        let scores = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                0.8 * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let f = field(w, h, scores);
        let mut c = filter_scores(&f, 0.5, 4)[0];
        refine_subpixel(&f, &mut c);
        assert!((c.position - Vector2::new(cx, cy)).norm() < 1e-9);
    }

    #[test]
    fn rescale_identity_and_uniform() {
        let cam = PinholeCamera::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap();
        let got = rescale_keypoints(&[Vector2::new(200.0, 150.0)], 400, 300, &cam);
        assert_eq!(got[0], Vector2::new(400.0, 300.0));
        let same = rescale_keypoints(&[Vector2::new(123.25, 456.5)], 800, 600, &cam);
        assert_eq!(same[0], Vector2::new(123.25, 456.5));
    }

    #[test]
    fn rescale_clamps_to_image() {
        let cam = PinholeCamera::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap();
        let got = rescale_keypoints(&[Vector2::new(399.9, -1.0)], 400, 300, &cam);
        assert_eq!(got[0], Vector2::new(799.0, 0.0));
    }

    proptest! {
        #[test]
        fn rescale_roundtrip(x in 0.0..399.0f64, y in 0.0..299.0f64, w in 401u32..1600, h in 301u32..1200) {
            let cam = PinholeCamera::new(500.0, 500.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
            let up = rescale_keypoints(&[Vector2::new(x, y)], 400, 300, &cam)[0];
            let down = Vector2::new(up.x * 400.0 / w as f64, up.y * 300.0 / h as f64);
            prop_assert!((down - Vector2::new(x, y)).norm() < 1e-9);
        }

        #[test]
        fn threshold_bounds_and_monotonicity(
            seed in 0u64..1000, mu1 in 0.0..1.0f64, mu2 in 0.001..1.0f64, m in 0usize..2000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = field(16, 12, (0..192).map(|_| rng.random::<f64>()).collect());
            let (mean, var) = score_statistics(&f);
            let base = mean + var.sqrt() / 2.0;
            let st = AdaptiveThresholdState { mu1, mu2, last_match_count: m, ..Default::default() };
            let th = compute_adaptive_threshold(&f, &st);
            prop_assert!(th >= base + mu1 / 2.0 - 1e-12 && th <= base + mu1 + 1e-12);
            let next = AdaptiveThresholdState { last_match_count: m + 1, ..st };
            prop_assert!(compute_adaptive_threshold(&f, &next) >= th);
            prop_assert!(filter_scores(&f, th + 0.05, 2).len() <= filter_scores(&f, th, 2).len()
                || threshold_cells(&f, th + 0.05).len() <= threshold_cells(&f, th).len());
        }
    }
}
