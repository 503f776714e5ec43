//! Prediction in physical units plus per-window interpretability capture.

use super::blocks::Mode;
use super::model::TftModel;
use super::train::per_window_quantiles;
use crate::dataset::{NormStats, Window};
use crate::error::Result;
use crate::interpret::InterpretationSnapshot;
use crate::tensor::Tensor;
use crate::timeutil::UtcHour;

/// Raw interpretable outputs for one window.
pub struct PerWindowOutput {
    pub site_id: String,
    pub origin: UtcHour,
    /// (tau x n_quantiles), sort-reconciled so levels are non-decreasing.
    pub quantiles: Tensor,
    /// Per head: (tau x (k+tau)) attention weights.
    pub attention_heads: Vec<Tensor>,
    /// (k x m_enc) encoder variable-selection weights.
    pub encoder_selection: Tensor,
    /// (tau x m_dec) decoder variable-selection weights.
    pub decoder_selection: Tensor,
    /// (m_static) static selection weights.
    pub static_selection: Vec<f64>,
}

pub struct Prediction {
    /// Median-quantile point estimate per window and decoder position, in
    /// physical target units.
    pub point: Vec<Vec<f64>>,
    /// Observed labels inverse-transformed back to physical units.
    pub observed: Vec<Vec<f64>>,
    pub label_gap: Vec<Vec<bool>>,
    pub outputs: Option<Vec<PerWindowOutput>>,
}

/// Runs the model over all windows in eval mode. Point estimates are the
/// median-quantile output inverse-normalized to physical units; per-window
/// interpretable outputs are retained when `capture` is set.
pub fn predict(
    model: &TftModel,
    windows: &[Window],
    stats: &NormStats,
    capture: bool,
) -> Result<Prediction> {
    let tau = model.layout.spec.decoder_length;
    let k = model.layout.spec.encoder_length;
    let n_q = model.config.quantiles.len();
    let median = model.config.median_index();
    let mut point = Vec::with_capacity(windows.len());
    let mut observed = Vec::with_capacity(windows.len());
    let mut label_gap = Vec::with_capacity(windows.len());
    let mut outputs = capture.then(Vec::new);

    for chunk in windows.chunks(model.config.batch_size.max(1)) {
        let (raw, _) = model.forward(chunk, &mut Mode::Eval)?;
        let batch = chunk.len();
        let per_window = per_window_quantiles(&raw.yhat, batch, tau, n_q);
        for (b, w) in chunk.iter().enumerate() {
            let mut reconciled = per_window[b].clone();
            for pos in 0..tau {
                let row = reconciled.row_mut(pos);
                row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
            point.push(
                (0..tau)
                    .map(|pos| stats.inverse_target(reconciled.at(pos, median)))
                    .collect(),
            );
            observed.push(w.labels.iter().map(|y| stats.inverse_target(*y)).collect());
            label_gap.push(w.label_gap.clone());
            if let Some(outs) = &mut outputs {
                let m_enc = model.layout.encoder.len();
                let m_dec = model.layout.decoder.len();
                let mut enc_sel = Tensor::zeros(&[k, m_enc]);
                for t in 0..k {
                    enc_sel
                        .row_mut(t)
                        .copy_from_slice(raw.encoder_weights.row(t * batch + b));
                }
                let mut dec_sel = Tensor::zeros(&[tau, m_dec]);
                for t in 0..tau {
                    dec_sel
                        .row_mut(t)
                        .copy_from_slice(raw.decoder_weights.row(t * batch + b));
                }
                outs.push(PerWindowOutput {
                    site_id: w.site_id.clone(),
                    origin: w.origin,
                    quantiles: reconciled,
                    attention_heads: raw.attention.per_head[b].clone(),
                    encoder_selection: enc_sel,
                    decoder_selection: dec_sel,
                    static_selection: raw.static_weights.row(b).to_vec(),
                });
            }
        }
    }
    Ok(Prediction {
        point,
        observed,
        label_gap,
        outputs,
    })
}

/// Head-averaged attention restricted to the k encoder positions and
/// renormalized to sum to 1, paired with the per-index variable-selection
/// weights, keyed by (site, origin).
pub fn capture_interpretation(outputs: &[PerWindowOutput], k: usize) -> Vec<InterpretationSnapshot> {
    outputs
        .iter()
        .map(|o| {
            let n_heads = o.attention_heads.len() as f64;
            // average heads, take decoder position 0, encoder columns only
            let total = o.attention_heads[0].cols();
            let mut avg = vec![0.0; total];
            for head in &o.attention_heads {
                for (a, v) in avg.iter_mut().zip(head.row(0)) {
                    *a += v / n_heads;
                }
            }
            let mut attention: Vec<f64> = avg[..k].to_vec();
            let sum: f64 = attention.iter().sum();
            if sum > 1e-12 {
                attention.iter_mut().for_each(|a| *a /= sum);
            } else {
                attention.iter_mut().for_each(|a| *a = 1.0 / k as f64);
            }
            InterpretationSnapshot {
                site_id: o.site_id.clone(),
                origin: o.origin,
                attention,
                importance: o.encoder_selection.clone(),
            }
        })
        .collect()
}
