//! Training loop: seeded shuffling, mini-batch pinball loss, adaptive-moment
//! updates, early stopping on validation loss, and divergence handling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::blocks::Mode;
use super::model::TftModel;
use crate::dataset::Window;
use crate::error::{Error, Result};
use crate::neuralcore::loss::pinball_loss;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters the model now holds.
    pub best_epoch: usize,
    /// True when training aborted on a non-finite loss; the model holds the
    /// last good parameters.
    pub diverged: bool,
}

/// Time-major labels and gap mask for one batch.
fn batch_targets(windows: &[Window], include_gap_labels: bool) -> (Vec<f64>, Vec<bool>) {
    let tau = windows[0].labels.len();
    let batch = windows.len();
    let mut y = vec![0.0; tau * batch];
    let mut mask = vec![false; tau * batch];
    for (b, w) in windows.iter().enumerate() {
        for t in 0..tau {
            y[t * batch + b] = w.labels[t];
            mask[t * batch + b] = !include_gap_labels && w.label_gap[t];
        }
    }
    (y, mask)
}

/// Mean pinball loss over a window set without updating anything; `None`
/// when every label is masked.
pub fn evaluate_loss(model: &TftModel, windows: &[Window]) -> Result<Option<f64>> {
    if windows.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(model.config.batch_size) {
        let (raw, _) = model.forward(chunk, &mut Mode::Eval)?;
        let (y, mask) = batch_targets(chunk, model.config.include_gap_labels);
        let active = mask.iter().filter(|m| !**m).count();
        if active == 0 {
            continue;
        }
        let (loss, _) = pinball_loss(&y, &raw.yhat, &model.config.quantiles, &mask)?;
        total += loss * active as f64;
        count += active;
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Trains in place. Training and validation sites must be disjoint (the
/// upscaling contract); gap-filled labels are excluded from the loss unless
/// configured otherwise. Deterministic given the config seed.
pub fn train(
    model: &mut TftModel,
    train_windows: &[Window],
    val_windows: &[Window],
) -> Result<TrainOutcome> {
    if train_windows.is_empty() {
        return Err(Error::data("train: no training windows"));
    }
    let train_sites: BTreeSet<&str> = train_windows.iter().map(|w| w.site_id.as_str()).collect();
    let val_sites: BTreeSet<&str> = val_windows.iter().map(|w| w.site_id.as_str()).collect();
    let overlap: Vec<&&str> = train_sites.intersection(&val_sites).collect();
    if !overlap.is_empty() {
        return Err(Error::config(format!(
            "train and validation share sites: {overlap:?}"
        )));
    }

    let cfg = model.config.clone();
    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.store.clone_values();
    let mut epochs_since_best = 0usize;
    let mut diverged = false;

    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    'epochs: for epoch in 0..cfg.max_epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        let mut batch_windows: Vec<Window> = Vec::with_capacity(cfg.batch_size);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch_windows.clear();
            batch_windows.extend(chunk.iter().map(|&i| train_windows[i].clone()));
            let (y, mask) = batch_targets(&batch_windows, cfg.include_gap_labels);
            if mask.iter().all(|m| *m) {
                continue;
            }
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(
                cfg.seed
                    ^ (epoch as u64).wrapping_mul(0x1000_0001)
                    ^ (batch_idx as u64).wrapping_mul(0x5851_f42d),
            );
            let mut mode = Mode::Train {
                rng: &mut dropout_rng,
                dropout: cfg.dropout,
            };
            let (raw, cache) = model.forward(&batch_windows, &mut mode)?;
            let (loss, grad) = pinball_loss(&y, &raw.yhat, &cfg.quantiles, &mask)?;
            if !loss.is_finite() {
                model.store.restore_values(&best_params);
                diverged = true;
                break 'epochs;
            }
            let active = mask.iter().filter(|m| !**m).count();
            epoch_loss += loss * active as f64;
            epoch_count += active;
            model.store.zero_grads();
            model.backward(&cache, &grad);
            model
                .store
                .adam_step(cfg.learning_rate, 0.9, 0.999, 1e-8)?;
        }
        let train_loss = if epoch_count > 0 {
            epoch_loss / epoch_count as f64
        } else {
            f64::NAN
        };
        let val_loss = evaluate_loss(model, val_windows)?;
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            model.store.restore_values(&best_params);
            diverged = true;
            break;
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        // early stopping tracks validation loss, or training loss when no
        // validation windows were provided
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best_loss {
            best_loss = monitored;
            best_epoch = epoch;
            best_params = model.store.clone_values();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.early_stop_patience.max(1) {
                break;
            }
        }
    }
    model.store.restore_values(&best_params);
    Ok(TrainOutcome {
        history,
        best_epoch,
        diverged,
    })
}

/// Prediction-scale tensor of raw quantile outputs reshaped per window:
/// row-major (tau x n_quantiles) blocks in window order.
pub fn per_window_quantiles(yhat: &Tensor, batch: usize, tau: usize, n_q: usize) -> Vec<Tensor> {
    (0..batch)
        .map(|b| {
            let mut t = Tensor::zeros(&[tau, n_q]);
            for pos in 0..tau {
                for q in 0..n_q {
                    t.set(pos, q, yhat.at(pos * batch + b, q));
                }
            }
            t
        })
        .collect()
}
