//! Weakly-supervised temporal action localization with explicit background
//! modeling.
//!
//! Each modality stream learns a class-agnostic attention over segments and a
//! (C+1)-way classifier from video-level labels only. At test time, attention
//! from both streams is thresholded into proposals which are scored with the
//! attention-weighted class activations and pruned with per-class NMS.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod training;

pub use error::{Error, Result};
