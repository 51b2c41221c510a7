use nalgebra::Matrix2;

use super::MapPoint;

/// Default observation-count hyperparameter `λ`.
pub const DEFAULT_LAMBDA: u32 = 5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `f_o`: zero without observations, `Obs/λ` below `λ`, `sigmoid(Obs)` from
/// `λ` on.
pub fn observation_weight(obs: usize, lambda: u32) -> f64 {
    assert!(lambda >= 1, "lambda must be at least 1");
    if obs == 0 {
        0.0
    } else if obs < lambda as usize {
        obs as f64 / lambda as f64
    } else {
        sigmoid(obs as f64)
    }
}

/// Scalar `w` of `Λ = w·I` with `w = (f_sp + f_o) / 2`.
pub fn information_weight(score: f64, obs: usize, lambda: u32) -> f64 {
    0.5 * (score + observation_weight(obs, lambda))
}

pub fn information_matrix(point: &MapPoint, lambda: u32) -> Matrix2<f64> {
    Matrix2::identity() * information_weight(point.score(), point.obs(), lambda)
}
