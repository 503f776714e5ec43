//! Core library of the fluxscale toolkit.
//!
//! The pipeline moves hourly flux-tower data through a fixed set of stages:
//! ingestion onto a common hourly grid ([`dataset`]), KNN gap-filling
//! ([`gapfill`]), stratified site splits ([`split`]), tree-ensemble baselines
//! ([`trees`]), a temporal fusion transformer trained from scratch ([`tft`])
//! on top of hand-written differentiable primitives ([`neuralcore`]),
//! evaluation metrics ([`evalmetrics`]), and interpretability exports
//! ([`interpret`]). A deterministic synthetic site generator ([`synth`])
//! makes the whole pipeline runnable without any external data.

pub mod dataset;
pub mod error;
pub mod evalmetrics;
pub mod gapfill;
pub mod interpret;
pub mod neuralcore;
pub mod split;
pub mod synth;
pub mod tensor;
pub mod tft;
pub mod timeutil;
pub mod trees;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use timeutil::UtcHour;
