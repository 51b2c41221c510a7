//! Poses, camera projection and the multi-view solvers shared by every stage.

mod camera;
mod essential;
mod pnp;
mod pose;
mod ransac;
mod triangulation;
mod umeyama;

pub use camera::{project, PinholeCamera, MIN_DEPTH};
pub use essential::{solve_essential_ransac, EssentialEstimate};
pub use pnp::{p3p, refine_pose, solve_pnp_ransac, PnpEstimate};
pub use pose::{quaternion_from_matrix, skew, PoseSE3, PoseSim3};
pub use ransac::RansacParams;
pub use triangulation::{parallax_angle, triangulate, TriangulationParams};
pub use umeyama::{solve_sim3_umeyama, umeyama_svd};

use thiserror::Error;

/// A 3-D point in the world frame, in metres (or map units for monocular maps).
pub type Landmark3D = nalgebra::Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("parallax {angle_deg:.4}° below minimum {min_deg}°")]
    LowParallax { angle_deg: f64, min_deg: f64 },
    #[error("triangulated point lies behind a camera")]
    NegativeDepth,
    #[error("reprojection error {error_px:.3} px exceeds {max_px} px")]
    ReprojectionError { error_px: f64, max_px: f64 },
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("no consensus: best hypothesis has {inliers} inliers, need {needed}")]
    NoConsensus { inliers: usize, needed: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
}
