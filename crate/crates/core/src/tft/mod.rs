//! Temporal fusion transformer: model, training loop, prediction, and raw
//! interpretability extraction.

pub mod blocks;
pub mod checkpoint;
pub mod model;
pub mod predict;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{RawForward, TftModel};
pub use predict::{capture_interpretation, predict, PerWindowOutput, Prediction};
pub use train::{train, EpochStats, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TftConfig {
    pub hidden_size: usize,
    pub n_heads: usize,
    pub dropout: f64,
    /// Pinball-loss levels; the level closest to 0.5 is the point estimate.
    pub quantiles: Vec<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Include gap-filled labels in the training loss (default: excluded).
    #[serde(default)]
    pub include_gap_labels: bool,
}

impl Default for TftConfig {
    fn default() -> Self {
        TftConfig {
            hidden_size: 16,
            n_heads: 4,
            dropout: 0.1,
            quantiles: vec![0.1, 0.5, 0.9],
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            early_stop_patience: 10,
            seed: 1,
            include_gap_labels: false,
        }
    }
}

impl TftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.n_heads == 0 {
            return Err(Error::config("hidden_size and n_heads must be positive"));
        }
        if self.quantiles.is_empty() {
            return Err(Error::config("at least one quantile level required"));
        }
        if self.quantiles.iter().any(|q| *q <= 0.0 || *q >= 1.0) {
            return Err(Error::config("quantile levels must lie in (0,1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0,1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        Ok(())
    }

    /// Index of the quantile used as the point estimate (closest to 0.5).
    pub fn median_index(&self) -> usize {
        self.quantiles
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 0.5)
                    .abs()
                    .partial_cmp(&(b.1 - 0.5).abs())
                    .unwrap()
                    .then(a.0.cmp(&b.0))
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}
