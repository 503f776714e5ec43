//! Two KNN imputation modes: filling missing values within existing records,
//! and filling whole missing records (sequence gaps). Both use Euclidean
//! distance with a uniform average over 5 neighbors by default.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataset::{FeatureColumn, SiteSeries};
use crate::error::{Error, Result};
use crate::timeutil::UtcHour;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Uniform,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub k_neighbors: usize,
    pub metric: Metric,
    pub weighting: Weighting,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            k_neighbors: 5,
            metric: Metric::Euclidean,
            weighting: Weighting::Uniform,
        }
    }
}

/// Calendar-space coordinates used as the neighbor space for sequence-gap
/// filling: sin/cos of hour-of-day and day-of-year plus linear time in
/// years, so neighbors share diurnal and seasonal position.
pub fn calendar_coords(ts: UtcHour) -> [f64; 5] {
    let tau = std::f64::consts::TAU;
    let hod = ts.hour_of_day() as f64;
    let doy = (ts.day_of_year() - 1) as f64 + hod / 24.0;
    let hour_angle = tau * hod / 24.0;
    let season_angle = tau * doy / 365.25;
    [
        hour_angle.sin(),
        hour_angle.cos(),
        season_angle.sin(),
        season_angle.cos(),
        ts.0 as f64 / 8766.0,
    ]
}

/// Fills missing real feature cells with the uniform mean of the feature
/// over the k nearest rows. Nearness is Euclidean distance over the features
/// observed in both rows, scaled by sqrt(total/shared); rows sharing no
/// observed feature are not neighbors, and neighbors must have the feature
/// being filled observed. All fills read the original (pre-fill) matrix, so
/// the operation is idempotent. Target values are never imputed here.
pub fn impute_within_records(series: &SiteSeries, cfg: &ImputeConfig) -> Result<SiteSeries> {
    series.validate()?;
    if cfg.k_neighbors == 0 {
        return Err(Error::config("k_neighbors must be positive"));
    }
    let n = series.len();
    let names: Vec<&String> = series
        .features
        .iter()
        .filter(|(_, c)| matches!(c, FeatureColumn::Real(_)))
        .map(|(n, _)| n)
        .collect();
    let total = names.len();
    if total == 0 || n == 0 {
        return Ok(series.clone());
    }
    let columns: Vec<&[f64]> = names
        .iter()
        .map(|name| match &series.features[*name] {
            FeatureColumn::Real(v) => v.as_slice(),
            _ => unreachable!(),
        })
        .collect();
    for (name, col) in names.iter().zip(&columns) {
        if col.iter().all(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "site {}: feature `{name}` is missing in every row",
                series.site_id
            )));
        }
    }

    let mut filled: Vec<Vec<f64>> = columns.iter().map(|c| c.to_vec()).collect();
    for (ci, col) in columns.iter().enumerate() {
        for r in 0..n {
            if col[r].is_finite() {
                continue;
            }
            filled[ci][r] = fill_cell(&columns, total, r, ci, cfg.k_neighbors);
        }
    }

    let mut out = series.clone();
    for (name, col) in names.iter().zip(filled) {
        out.features.insert((*name).clone(), FeatureColumn::Real(col));
    }
    Ok(out)
}

/// Mean of the k nearest donors for cell (row, col); falls back to the
/// column's observed mean when no row qualifies as a neighbor.
fn fill_cell(columns: &[&[f64]], total: usize, row: usize, col: usize, k: usize) -> f64 {
    let n = columns[0].len();
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for other in 0..n {
        if other == row || !columns[col][other].is_finite() {
            continue;
        }
        let mut shared = 0usize;
        let mut sum = 0.0;
        for feature in columns.iter() {
            let a = feature[row];
            let b = feature[other];
            if a.is_finite() && b.is_finite() {
                shared += 1;
                sum += (a - b) * (a - b);
            }
        }
        if shared == 0 {
            continue;
        }
        let d2 = sum * total as f64 / shared as f64;
        candidates.push((d2, other));
    }
    if candidates.is_empty() {
        let observed: Vec<f64> = columns[col].iter().cloned().filter(|v| v.is_finite()).collect();
        return observed.iter().sum::<f64>() / observed.len() as f64;
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let take = candidates.len().min(k);
    let mut sum = 0.0;
    for (_, idx) in &candidates[..take] {
        sum += columns[col][*idx];
    }
    sum / take as f64
}

/// Materializes absent hourly timestamps between the first and last record.
/// Each synthesized record takes the uniform mean of its k nearest existing
/// records in calendar space (categorical cells copy the nearest neighbor).
/// The target of a synthesized record is the mean over the k nearest records
/// that have an observed target; records that exist but lack a target get
/// the same treatment. Every record whose target was synthesized carries
/// gap_flag = 1. The result is a contiguous hourly grid.
pub fn impute_sequence_gaps(series: &SiteSeries, cfg: &ImputeConfig) -> Result<SiteSeries> {
    series.validate()?;
    if cfg.k_neighbors == 0 {
        return Err(Error::config("k_neighbors must be positive"));
    }
    let n = series.len();
    if n < cfg.k_neighbors {
        return Err(Error::data(format!(
            "site {}: {n} existing records is fewer than k = {}",
            series.site_id, cfg.k_neighbors
        )));
    }
    let with_target: Vec<usize> = (0..n).filter(|&i| series.target[i].is_finite()).collect();
    if with_target.len() < cfg.k_neighbors {
        return Err(Error::data(format!(
            "site {}: {} records with observed target is fewer than k = {}",
            series.site_id,
            with_target.len(),
            cfg.k_neighbors
        )));
    }

    let first = series.timestamps[0];
    let last = *series.timestamps.last().unwrap();
    let span = (last.0 - first.0 + 1) as usize;
    let existing: BTreeMap<i64, usize> = series
        .timestamps
        .iter()
        .enumerate()
        .map(|(i, t)| (t.0, i))
        .collect();
    let coords: Vec<[f64; 5]> = series.timestamps.iter().map(|t| calendar_coords(*t)).collect();

    let feature_names: Vec<String> = series.features.keys().cloned().collect();
    let mut new_features: BTreeMap<String, FeatureColumn> = feature_names
        .iter()
        .map(|name| {
            let col = match &series.features[name] {
                FeatureColumn::Real(_) => FeatureColumn::Real(Vec::with_capacity(span)),
                FeatureColumn::Categorical(_) => {
                    FeatureColumn::Categorical(Vec::with_capacity(span))
                }
            };
            (name.clone(), col)
        })
        .collect();
    let mut timestamps = Vec::with_capacity(span);
    let mut target = Vec::with_capacity(span);
    let mut gap_flag = Vec::with_capacity(span);
    let mut estimated = series.estimated_target.as_ref().map(|_| Vec::with_capacity(span));

    for offset in 0..span {
        let ts = UtcHour(first.0 + offset as i64);
        timestamps.push(ts);
        match existing.get(&ts.0) {
            Some(&idx) => {
                for name in &feature_names {
                    match (&series.features[name], new_features.get_mut(name).unwrap()) {
                        (FeatureColumn::Real(src), FeatureColumn::Real(dst)) => dst.push(src[idx]),
                        (FeatureColumn::Categorical(src), FeatureColumn::Categorical(dst)) => {
                            dst.push(src[idx].clone())
                        }
                        _ => unreachable!(),
                    }
                }
                if let (Some(est), Some(src)) = (&mut estimated, &series.estimated_target) {
                    est.push(src[idx]);
                }
                if series.target[idx].is_finite() {
                    target.push(series.target[idx]);
                    gap_flag.push(series.gap_flag[idx]);
                } else {
                    // record exists but its label was never observed
                    let neighbors = nearest(&coords, &with_target, ts, cfg.k_neighbors, Some(idx));
                    target.push(mean_of(&series.target, &neighbors));
                    gap_flag.push(1);
                }
            }
            None => {
                let all: Vec<usize> = (0..n).collect();
                let neighbors = nearest(&coords, &all, ts, cfg.k_neighbors, None);
                for name in &feature_names {
                    match (&series.features[name], new_features.get_mut(name).unwrap()) {
                        (FeatureColumn::Real(src), FeatureColumn::Real(dst)) => {
                            dst.push(mean_of(src, &neighbors));
                        }
                        (FeatureColumn::Categorical(src), FeatureColumn::Categorical(dst)) => {
                            let v = neighbors.iter().find_map(|&i| src[i].clone());
                            dst.push(v);
                        }
                        _ => unreachable!(),
                    }
                }
                let t_neighbors = nearest(&coords, &with_target, ts, cfg.k_neighbors, None);
                target.push(mean_of(&series.target, &t_neighbors));
                if let Some(est) = &mut estimated {
                    let src = series.estimated_target.as_ref().unwrap();
                    est.push(mean_of(src, &neighbors));
                }
                gap_flag.push(1);
            }
        }
    }

    let out = SiteSeries {
        site_id: series.site_id.clone(),
        timestamps,
        target,
        features: new_features,
        gap_flag,
        statics: series.statics.clone(),
        estimated_target: estimated,
    };
    out.validate()?;
    debug_assert!(out.is_contiguous_hourly());
    Ok(out)
}

/// Indices of the k nearest candidates in calendar space; ties broken by
/// earlier timestamp (smaller index).
fn nearest(
    coords: &[[f64; 5]],
    candidates: &[usize],
    ts: UtcHour,
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let query = calendar_coords(ts);
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&i| Some(i) != exclude)
        .map(|&i| {
            let c = &coords[i];
            let d2: f64 = query.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Uniform mean over the neighbors' finite values, in neighbor order.
fn mean_of(values: &[f64], neighbors: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in neighbors {
        if values[i].is_finite() {
            sum += values[i];
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Convenience: runs within-record imputation then sequence-gap filling,
/// the order the pipeline uses.
pub fn gapfill_site(series: &SiteSeries, cfg: &ImputeConfig) -> Result<SiteSeries> {
    let filled = impute_within_records(series, cfg)?;
    impute_sequence_gaps(&filled, cfg)
}
