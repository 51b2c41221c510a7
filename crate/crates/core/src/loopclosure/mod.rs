//! Place recognition on binarized descriptors, loop verification with a
//! similarity transform and map-wide loop correction.

mod binary;
mod bow;
mod correct;
mod database;
mod detect;
mod posegraph;
mod sim3;
mod vocabulary;

pub use binary::{binarize, hamming, BinaryDescriptor, BINARY_BITS};
pub use bow::{bow_similarity, quantize, quantize_binary, BowVector};
pub use correct::{correct_loop, CorrectParams, LoopCorrection};
pub use database::KeyframeDatabase;
pub use detect::{detect_candidates, ConsistencyGate, DetectParams, LoopCandidate};
pub use posegraph::{edge_residual, sim3_retract, PoseGraph, PoseGraphEdge, PoseGraphReport};
pub use sim3::{compute_sim3, verify_covisible, Sim3Estimate, Sim3Params, Verification, VerifyParams};
pub use vocabulary::{train_vocabulary, train_vocabulary_documents, VocabularyNode, VocabularyTree};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("vocabulary corpus is empty")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("vocabulary format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("no loop candidate")]
    NoCandidate,
    #[error("too few matches: {got} < {needed}")]
    TooFewMatches { got: usize, needed: usize },
    #[error("no similarity consensus: {inliers} inliers, need {needed}")]
    NoConsensus { inliers: usize, needed: usize },
    #[error("unknown keyframe {0}")]
    UnknownKeyFrame(u64),
}

impl From<std::io::Error> for LoopError {
    fn from(e: std::io::Error) -> Self {
        LoopError::Io(e.to_string())
    }
}
