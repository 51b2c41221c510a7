use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings shared by the RANSAC solvers.
///
/// Every call seeds its own generator from `seed`, so results are
/// reproducible and independent of call order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Inlier threshold in pixels.
    pub threshold: f64,
    /// Early-exit confidence.
    pub confidence: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            threshold: 2.0,
            confidence: 0.999,
            min_inliers: 15,
            seed: 0x5eed,
        }
    }
}

impl RansacParams {
    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Number of draws needed to hit an all-inlier sample with the given confidence.
pub(crate) fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    let w = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
    if w >= 1.0 - 1e-12 {
        return 1;
    }
    if w <= 1e-12 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

pub(crate) fn draw(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k).into_vec()
}
