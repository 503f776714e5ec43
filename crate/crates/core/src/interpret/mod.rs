//! Interpretability analyses: attention curves by IGBP group, temporal
//! encoder-importance snapshots, and top-k average importance tables, with
//! SVG figures and CSV tables as outputs.

pub mod svg;

pub use svg::{render_group_attention_svg, render_snapshot_svg};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::timeutil::UtcHour;

/// Per-prediction interpretable outputs: head-averaged encoder attention
/// (sums to 1) and the k x m_enc variable-selection matrix (each row sums
/// to 1), keyed by (site, origin).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpretationSnapshot {
    pub site_id: String,
    pub origin: UtcHour,
    pub attention: Vec<f64>,
    pub importance: Tensor,
}

impl InterpretationSnapshot {
    pub fn encoder_length(&self) -> usize {
        self.attention.len()
    }
}

/// Writes snapshots as long-format CSV: one row per encoder index with the
/// attention value and one column per feature weight.
pub fn write_snapshot_csv(
    path: &Path,
    snapshots: &[InterpretationSnapshot],
    feature_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["site_id".to_string(), "origin".to_string(), "encoder_index".to_string(), "attention".to_string()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for s in snapshots {
        let k = s.encoder_length();
        for idx in 0..k {
            let mut rec = vec![
                s.site_id.clone(),
                s.origin.to_string(),
                format!("{}", idx as i64 - k as i64),
                format!("{}", s.attention[idx]),
            ];
            rec.extend(s.importance.row(idx).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot_csv(path: &Path) -> Result<(Vec<InterpretationSnapshot>, Vec<String>)> {
    let mut r = csv::Reader::from_path(path)?;
    let feature_names: Vec<String> = r
        .headers()?
        .iter()
        .skip(4)
        .map(|s| s.to_string())
        .collect();
    let mut grouped: BTreeMap<(String, String), Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let key = (rec[0].to_string(), rec[1].to_string());
        let attention: f64 = rec[3].parse().map_err(|_| Error::data("bad attention value"))?;
        let weights: Vec<f64> = rec
            .iter()
            .skip(4)
            .map(|v| v.parse().map_err(|_| Error::data("bad importance value")))
            .collect::<Result<_>>()?;
        grouped.entry(key).or_default().push((attention, weights));
    }
    let mut out = Vec::new();
    for ((site_id, origin), rows) in grouped {
        let k = rows.len();
        let m = feature_names.len();
        let mut attention = Vec::with_capacity(k);
        let mut importance = Tensor::zeros(&[k, m]);
        for (idx, (a, w)) in rows.into_iter().enumerate() {
            attention.push(a);
            importance.row_mut(idx).copy_from_slice(&w);
        }
        out.push(InterpretationSnapshot {
            site_id,
            origin: UtcHour::parse(&origin)?,
            attention,
            importance,
        });
    }
    Ok((out, feature_names))
}

/// Mean attention curve per requested group, indexed -k..-1. Errors when a
/// requested group has no snapshots.
pub fn attention_by_group(
    snapshots: &[InterpretationSnapshot],
    site_group: &BTreeMap<String, String>,
    groups: &[String],
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for group in groups {
        let members: Vec<&InterpretationSnapshot> = snapshots
            .iter()
            .filter(|s| site_group.get(&s.site_id).is_some_and(|g| g == group))
            .collect();
        if members.is_empty() {
            return Err(Error::data(format!("no snapshots for group `{group}`")));
        }
        let k = members[0].encoder_length();
        let mut curve = vec![0.0; k];
        for s in &members {
            if s.encoder_length() != k {
                return Err(Error::data("snapshots disagree on encoder length"));
            }
            for (c, a) in curve.iter_mut().zip(&s.attention) {
                *c += a;
            }
        }
        curve.iter_mut().for_each(|c| *c /= members.len() as f64);
        out.push((group.clone(), curve));
    }
    Ok(out)
}

/// Mean importance per feature over encoder indices and snapshots, in
/// percent, descending; `cut` limits the returned rows (15 by default in
/// the table outputs). Percentages over the full feature set total 100.
pub fn top_features(
    snapshots: &[InterpretationSnapshot],
    feature_names: &[String],
    cut: usize,
) -> Result<Vec<(String, f64)>> {
    if snapshots.is_empty() {
        return Err(Error::data("top_features: no snapshots"));
    }
    let m = feature_names.len();
    let mut sums = vec![0.0; m];
    let mut count = 0usize;
    for s in snapshots {
        if s.importance.cols() != m {
            return Err(Error::data(format!(
                "snapshot has {} features, expected {m}",
                s.importance.cols()
            )));
        }
        for idx in 0..s.importance.rows() {
            for (sum, v) in sums.iter_mut().zip(s.importance.row(idx)) {
                *sum += v;
            }
            count += 1;
        }
    }
    let mut rows: Vec<(String, f64)> = feature_names
        .iter()
        .zip(&sums)
        .map(|(n, s)| (n.clone(), 100.0 * s / count as f64))
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    rows.truncate(cut);
    Ok(rows)
}

/// Writes a ranked importance table as CSV `rank,feature,importance_pct`.
pub fn write_top_features_csv(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "feature", "importance_pct"])?;
    for (i, (name, pct)) in rows.iter().enumerate() {
        w.write_record([&format!("{}", i + 1), name, &format!("{pct:.4}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(site: &str, k: usize, m: usize, salt: f64) -> InterpretationSnapshot {
        let mut attention: Vec<f64> = (0..k).map(|i| 1.0 + ((i as f64) * salt).sin().abs()).collect();
        let sum: f64 = attention.iter().sum();
        attention.iter_mut().for_each(|a| *a /= sum);
        let mut importance = Tensor::zeros(&[k, m]);
        for idx in 0..k {
            let row: Vec<f64> = (0..m).map(|j| 1.0 + ((idx * m + j) as f64 * salt).cos().abs()).collect();
            let s: f64 = row.iter().sum();
            for (c, v) in importance.row_mut(idx).iter_mut().zip(&row) {
                *c = v / s;
            }
        }
        InterpretationSnapshot {
            site_id: site.to_string(),
            origin: UtcHour::from_ymdh(2014, 7, 15, 12).unwrap(),
            attention,
            importance,
        }
    }

    #[test]
    fn single_snapshot_curve_is_the_snapshot() {
        let s = snapshot("A", 8, 3, 0.7);
        let map: BTreeMap<String, String> = [("A".to_string(), "GRA".to_string())].into();
        let curves = attention_by_group(&[s.clone()], &map, &["GRA".to_string()]).unwrap();
        assert_eq!(curves[0].1, s.attention);
        let total: f64 = curves[0].1.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mean_of_identical_snapshots_unchanged_and_unknown_group_errors() {
        let s = snapshot("A", 6, 2, 0.3);
        let map: BTreeMap<String, String> = [("A".to_string(), "GRA".to_string())].into();
        let curves =
            attention_by_group(&[s.clone(), s.clone()], &map, &["GRA".to_string()]).unwrap();
        for (c, a) in curves[0].1.iter().zip(&s.attention) {
            assert!((c - a).abs() < 1e-15);
        }
        assert!(attention_by_group(&[s], &map, &["OSH".to_string()]).is_err());
    }

    #[test]
    fn aggregation_commutes_with_snapshot_order() {
        let a = snapshot("A", 8, 4, 0.7);
        let b = snapshot("B", 8, 4, 1.3);
        let c = snapshot("C", 8, 4, 2.9);
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let map: BTreeMap<String, String> = ["A", "B", "C"]
            .iter()
            .map(|s| (s.to_string(), "GRA".to_string()))
            .collect();
        let fwd = attention_by_group(
            &[a.clone(), b.clone(), c.clone()],
            &map,
            &["GRA".to_string()],
        )
        .unwrap();
        let rev = attention_by_group(&[c.clone(), b.clone(), a.clone()], &map, &["GRA".to_string()]).unwrap();
        for (x, y) in fwd[0].1.iter().zip(&rev[0].1) {
            assert!((x - y).abs() < 1e-12);
        }
        let t1 = top_features(&[a.clone(), b.clone(), c.clone()], &names, 4).unwrap();
        let t2 = top_features(&[c, b, a], &names, 4).unwrap();
        for ((n1, v1), (n2, v2)) in t1.iter().zip(&t2) {
            assert_eq!(n1, n2);
            assert!((v1 - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_importance_splits_evenly_and_sums_to_100() {
        let k = 5;
        let m = 4;
        let mut s = snapshot("A", k, m, 0.1);
        s.importance = Tensor::from_vec(&[k, m], vec![1.0 / m as f64; k * m]);
        let names: Vec<String> = (0..m).map(|i| format!("f{i}")).collect();
        let rows = top_features(&[s], &names, m).unwrap();
        for (_, pct) in &rows {
            assert!((pct - 100.0 / m as f64).abs() < 1e-9);
        }
        let total: f64 = rows.iter().map(|(_, p)| p).sum();
        assert!((total - 100.0).abs() < 1e-6);
    }

    #[test]
    fn top_features_matches_direct_recomputation() {
        let snaps = vec![snapshot("A", 7, 5, 0.9), snapshot("B", 7, 5, 1.7)];
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let rows = top_features(&snaps, &names, 5).unwrap();
        // brute-force oracle over the raw matrices
        for (name, pct) in &rows {
            let j = names.iter().position(|n| n == name).unwrap();
            let mut sum = 0.0;
            let mut count = 0;
            for s in &snaps {
                for idx in 0..s.importance.rows() {
                    sum += s.importance.at(idx, j);
                    count += 1;
                }
            }
            assert!((pct - 100.0 * sum / count as f64).abs() < 1e-9);
        }
        // descending order
        for w in rows.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn snapshot_csv_round_trip() {
        let snaps = vec![snapshot("A", 4, 3, 0.5), snapshot("B", 4, 3, 1.1)];
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.csv");
        write_snapshot_csv(&path, &snaps, &names).unwrap();
        let (back, names2) = read_snapshot_csv(&path).unwrap();
        assert_eq!(names, names2);
        assert_eq!(back.len(), 2);
        for (a, b) in snaps.iter().zip(&back) {
            assert_eq!(a.site_id, b.site_id);
            assert_eq!(a.origin, b.origin);
            for (x, y) in a.attention.iter().zip(&b.attention) {
                assert_eq!(x, y);
            }
            assert_eq!(a.importance, b.importance);
        }
    }
}
