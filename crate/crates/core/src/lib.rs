//! Imbalanced ordinal classification with ranking-similarity regularization.
//!
//! The crate provides the W-RankSim regularizer on output-layer class
//! weights, the batch-wise RankSim baseline on hidden features, softmax
//! cross-entropy and the large margin cosine loss, a small MLP with
//! hand-written backpropagation, a synthetic imbalanced ordinal data
//! generator, and a training/evaluation/sweep harness.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod ranking;
pub mod regularizer;

pub use error::{Error, Result};
