//! Evaluation metrics: RMSE, MAE, Nash-Sutcliffe efficiency, per-group
//! breakdowns, and residual-distribution summaries.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    /// `None` when the observations have zero variance (NSE undefined).
    pub nse: Option<f64>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_breakdown: Option<Vec<(String, MetricReport)>>,
}

/// rmse = sqrt(mean((y-yhat)^2)); mae = mean|y-yhat|;
/// nse = 1 - sum((y-yhat)^2) / sum((y-ybar)^2).
pub fn compute_metrics(y: &[f64], yhat: &[f64]) -> Result<MetricReport> {
    if y.is_empty() {
        return Err(Error::data("compute_metrics: empty input"));
    }
    if y.len() != yhat.len() {
        return Err(Error::data(format!(
            "compute_metrics: length mismatch {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.iter().chain(yhat.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("compute_metrics: non-finite value"));
    }
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut sst = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        let r = a - b;
        sse += r * r;
        sae += r.abs();
        sst += (a - mean_y) * (a - mean_y);
    }
    let nse = if sst > 0.0 { Some(1.0 - sse / sst) } else { None };
    Ok(MetricReport {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        nse,
        n: y.len(),
        group_breakdown: None,
    })
}

/// One report per group, sorted by descending NSE (undefined NSE last),
/// with an `ALL` row covering the pooled samples appended.
pub fn breakdown_by_group(
    y: &[f64],
    yhat: &[f64],
    groups: &[String],
) -> Result<Vec<(String, MetricReport)>> {
    if groups.len() != y.len() {
        return Err(Error::data("breakdown_by_group: group label per sample required"));
    }
    let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((a, b), g) in y.iter().zip(yhat).zip(groups) {
        let entry = by_group.entry(g.as_str()).or_default();
        entry.0.push(*a);
        entry.1.push(*b);
    }
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for (g, (gy, gyhat)) in by_group {
        rows.push((g.to_string(), compute_metrics(&gy, &gyhat)?));
    }
    rows.sort_by(|a, b| {
        let ka = a.1.nse.unwrap_or(f64::NEG_INFINITY);
        let kb = b.1.nse.unwrap_or(f64::NEG_INFINITY);
        kb.partial_cmp(&ka).unwrap().then_with(|| a.0.cmp(&b.0))
    });
    rows.push(("ALL".to_string(), compute_metrics(y, yhat)?));
    Ok(rows)
}

/// Absolute-residual summary for one group of samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub group: String,
    pub n: usize,
    /// Absolute-residual quantiles at 5/25/50/75/95 percent.
    pub quantiles: [f64; 5],
    pub hist_bin_width: f64,
    pub hist_counts: Vec<usize>,
}

pub const RESIDUAL_HIST_BINS: usize = 20;

/// Per-group absolute-residual quantiles and fixed-width histogram counts.
/// Bins share one global width so groups are directly comparable.
pub fn loss_distribution(
    y: &[f64],
    yhat: &[f64],
    by: &[String],
) -> Result<Vec<ResidualSummary>> {
    if y.len() != yhat.len() || y.len() != by.len() {
        return Err(Error::data("loss_distribution: length mismatch"));
    }
    if y.is_empty() {
        return Err(Error::data("loss_distribution: empty input"));
    }
    let mut residuals: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut max_abs: f64 = 0.0;
    for ((a, b), g) in y.iter().zip(yhat).zip(by) {
        let r = (a - b).abs();
        max_abs = max_abs.max(r);
        residuals.entry(g.as_str()).or_default().push(r);
    }
    let width = if max_abs > 0.0 {
        max_abs / RESIDUAL_HIST_BINS as f64
    } else {
        1.0
    };
    let mut out = Vec::new();
    for (g, mut rs) in residuals {
        rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quantiles = [
            sorted_quantile(&rs, 0.05),
            sorted_quantile(&rs, 0.25),
            sorted_quantile(&rs, 0.50),
            sorted_quantile(&rs, 0.75),
            sorted_quantile(&rs, 0.95),
        ];
        let mut counts = vec![0usize; RESIDUAL_HIST_BINS];
        for &r in &rs {
            let idx = ((r / width) as usize).min(RESIDUAL_HIST_BINS - 1);
            counts[idx] += 1;
        }
        out.push(ResidualSummary {
            group: g.to_string(),
            n: rs.len(),
            quantiles,
            hist_bin_width: width,
            hist_counts: counts,
        });
    }
    Ok(out)
}

/// Linear-interpolation quantile of an already sorted slice.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Renders reports as an aligned text table with one row per model.
pub fn format_comparison_table(rows: &[(String, &MetricReport)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("Model".len()))
        .max()
        .unwrap_or(5);
    let mut s = format!(
        "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "Model", "RMSE", "MAE", "NSE", "N"
    );
    for (name, r) in rows {
        let nse = match r.nse {
            Some(v) => format!("{v:.4}"),
            None => "undef".to_string(),
        };
        s.push_str(&format!(
            "{:<name_w$}  {:>8.4}  {:>8.4}  {:>8}  {:>8}\n",
            name, r.rmse, r.mae, nse, r.n
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_prediction() {
        let y = vec![1.0, 2.0, 3.0];
        let r = compute_metrics(&y, &y).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.nse, Some(1.0));
    }

    #[test]
    fn mean_predictor_has_zero_nse() {
        let y = vec![1.0, 2.0, 3.0, 6.0];
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let yhat = vec![mean; y.len()];
        let r = compute_metrics(&y, &yhat).unwrap();
        assert!(r.nse.unwrap().abs() < 1e-12);
    }

    #[test]
    fn direct_formula_example() {
        // y=[0,0], yhat=[3,4]: rmse = sqrt((9+16)/2) = sqrt(12.5), mae = 3.5
        let r = compute_metrics(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((r.mae - 3.5).abs() < 1e-12);
        assert!(r.nse.is_none()); // zero variance in y
    }

    #[test]
    fn nse_identity_and_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(2..40);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let yhat: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let r = compute_metrics(&y, &yhat).unwrap();
            assert!(r.rmse >= r.mae - 1e-15);
            let mean_y = y.iter().sum::<f64>() / n as f64;
            let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
            if let Some(nse) = r.nse {
                assert!(nse <= 1.0);
                let identity = 1.0 - (n as f64 * r.rmse * r.rmse) / sst;
                assert!((nse - identity).abs() < 1e-12);
                // affine transform a*v+b applied to both vectors
                let (a, b) = (rng.gen_range(0.1..4.0), rng.gen_range(-3.0..3.0));
                let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
                let yha: Vec<f64> = yhat.iter().map(|v| a * v + b).collect();
                let ra = compute_metrics(&ya, &yha).unwrap();
                assert!((ra.nse.unwrap() - nse).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn breakdown_single_group_equals_overall() {
        let y = vec![1.0, 2.0, 4.0];
        let yhat = vec![1.5, 2.5, 3.0];
        let groups = vec!["GRA".to_string(); 3];
        let rows = breakdown_by_group(&y, &yhat, &groups).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, "GRA");
        assert_eq!(rows[1].0, "ALL");
        assert_eq!(rows[0].1.rmse, rows[1].1.rmse);
    }

    #[test]
    fn breakdown_orders_by_descending_nse_and_pools_sse() {
        let y = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let yhat = vec![1.0, 2.0, 3.0, 1.5, 2.0, 2.0];
        let groups: Vec<String> = ["B", "B", "B", "A", "A", "A"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = breakdown_by_group(&y, &yhat, &groups).unwrap();
        assert_eq!(rows[0].0, "B"); // perfectly predicted, NSE 1, listed first
        assert_eq!(rows[0].1.nse, Some(1.0));
        // pooled SSE equals sum of per-group SSE
        let sse = |r: &MetricReport| r.rmse * r.rmse * r.n as f64;
        let pooled = sse(&rows[2].1);
        let parts = sse(&rows[0].1) + sse(&rows[1].1);
        assert!((pooled - parts).abs() < 1e-9);
    }

    #[test]
    fn loss_distribution_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400;
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let yhat: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let by: Vec<String> = (0..n).map(|i| format!("G{}", i % 3)).collect();
        let summaries = loss_distribution(&y, &yhat, &by).unwrap();
        for s in &summaries {
            // brute-force oracle: recompute quantiles from scratch
            let mut rs: Vec<f64> = y
                .iter()
                .zip(&yhat)
                .zip(&by)
                .filter(|(_, g)| **g == s.group)
                .map(|((a, b), _)| (a - b).abs())
                .collect();
            rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (i, q) in [0.05, 0.25, 0.5, 0.75, 0.95].iter().enumerate() {
                let pos = q * (rs.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                let w = pos - lo as f64;
                let oracle = rs[lo] * (1.0 - w) + rs[hi] * w;
                assert!((s.quantiles[i] - oracle).abs() < 1e-12);
            }
            assert_eq!(s.hist_counts.iter().sum::<usize>(), s.n);
        }
    }

    #[test]
    fn loss_distribution_all_zero_residuals() {
        let y = vec![1.0, 2.0, 3.0];
        let by = vec!["A".to_string(); 3];
        let s = loss_distribution(&y, &y, &by).unwrap();
        assert!(s[0].quantiles.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn identical_residuals_give_identical_summaries() {
        let y = vec![1.0, 2.0, 1.0, 2.0];
        let yhat = vec![1.5, 2.5, 1.5, 2.5];
        let by: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
        let s = loss_distribution(&y, &yhat, &by).unwrap();
        assert_eq!(s[0].quantiles, s[1].quantiles);
        assert_eq!(s[0].hist_counts, s[1].hist_counts);
    }
}
