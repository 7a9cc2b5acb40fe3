//! Collaborative filtering with joint ranking and rating-prediction training.
//!
//! A ranking model (BPR or CDAE) and a biased-MF rating model share user and
//! item embeddings. In the two-phase regime the rating side sees each item
//! through a learned per-item deviation and both sides through one tied
//! `tanh` layer, so the rating task models the post-consumption decision
//! while ranking uses the raw embeddings. Single-task baselines, a plain
//! multi-task baseline and a popularity baseline share the same training and
//! evaluation machinery.

pub mod cli;
pub mod error;
pub mod evaluator;
pub mod ingest;
pub mod params;
pub mod rankers;
pub mod rater;
pub mod trainer;

pub use error::{Error, Result};
