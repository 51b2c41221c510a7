//! Hybrid visual SLAM built around learned keypoints and assignment-matrix
//! matching.

pub mod features;
pub mod geometry;
pub mod matching;
pub mod loopclosure;
pub mod mapping;
pub mod evaluation;
pub mod simworld;
pub mod tracking;
pub mod config;
pub mod dataset;
pub mod pipeline;
