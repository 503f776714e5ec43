//! Channel normalization fit on the training split only.
//!
//! Real channels (declared features, calendar features, real statics, and
//! the target) are z-scored with training mean/std; the binary gap flag
//! passes through; categorical channels are remapped from interner indices
//! to a training vocabulary with a reserved unknown index. Statistics are
//! persisted as JSON so predictions can be inverse-transformed.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::windows::{ChannelDef, ChannelKind, Window, WindowLayout};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChannelStats {
    ZScore { mean: f64, std: f64 },
    Identity,
    /// Training vocabulary; unknown values map to index `values.len()`.
    Vocab { values: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub target_mean: f64,
    pub target_std: f64,
    pub channels: BTreeMap<String, ChannelStats>,
    pub warnings: Vec<String>,
}

impl NormStats {
    /// Fits statistics over the training windows. Channel names shared
    /// between encoder and decoder pool their cells.
    pub fn fit(layout: &WindowLayout, train: &[Window]) -> Result<NormStats> {
        if train.is_empty() {
            return Err(Error::data("normalize: no training windows"));
        }
        let mut warnings = Vec::new();

        let mut label_values: Vec<f64> = Vec::new();
        for w in train {
            label_values.extend_from_slice(&w.labels);
        }
        let (target_mean, target_std) = mean_std(&label_values);
        let target_std = if target_std < STD_FLOOR {
            warnings.push("target constant on train; std floored".to_string());
            STD_FLOOR
        } else {
            target_std
        };

        let mut channels = BTreeMap::new();
        let mut visit = |defs: &[ChannelDef], extract: &dyn Fn(&Window, usize) -> Vec<f64>| {
            for (c, def) in defs.iter().enumerate() {
                if channels.contains_key(&def.name) {
                    continue;
                }
                let stats = match &def.kind {
                    ChannelKind::Flag => ChannelStats::Identity,
                    ChannelKind::TargetHistory => ChannelStats::Identity, // marker; uses target stats
                    ChannelKind::Real => {
                        let mut values = Vec::new();
                        for w in train {
                            values.extend(extract(w, c));
                        }
                        let (mean, mut std) = mean_std(&values);
                        if std < STD_FLOOR {
                            warnings.push(format!(
                                "feature `{}` constant on train; std floored",
                                def.name
                            ));
                            std = STD_FLOOR;
                        }
                        ChannelStats::ZScore { mean, std }
                    }
                    ChannelKind::Categorical { interner } => {
                        let mut seen: BTreeSet<usize> = BTreeSet::new();
                        for w in train {
                            for v in extract(w, c) {
                                seen.insert(v as usize);
                            }
                        }
                        let values: Vec<String> = seen
                            .into_iter()
                            .filter_map(|i| interner.get(i).cloned())
                            .collect();
                        ChannelStats::Vocab { values }
                    }
                };
                channels.insert(def.name.clone(), stats);
            }
        };
        visit(&layout.encoder, &|w, c| {
            (0..w.encoder.rows()).map(|r| w.encoder.at(r, c)).collect()
        });
        visit(&layout.decoder, &|w, c| {
            (0..w.decoder.rows()).map(|r| w.decoder.at(r, c)).collect()
        });
        visit(&layout.statics, &|w, c| vec![w.statics[c]]);

        Ok(NormStats {
            target_mean,
            target_std,
            channels,
            warnings,
        })
    }

    /// Transforms windows in place: z-scores, vocabulary remaps, and label
    /// normalization with the target statistics.
    pub fn apply(&self, layout: &WindowLayout, windows: &mut [Window]) -> Result<()> {
        let enc_ops = self.channel_ops(&layout.encoder)?;
        let dec_ops = self.channel_ops(&layout.decoder)?;
        let static_ops = self.channel_ops(&layout.statics)?;
        for w in windows {
            for (c, op) in enc_ops.iter().enumerate() {
                for r in 0..w.encoder.rows() {
                    let v = op.apply(w.encoder.at(r, c), self);
                    w.encoder.set(r, c, v);
                }
            }
            for (c, op) in dec_ops.iter().enumerate() {
                for r in 0..w.decoder.rows() {
                    let v = op.apply(w.decoder.at(r, c), self);
                    w.decoder.set(r, c, v);
                }
            }
            for (c, op) in static_ops.iter().enumerate() {
                w.statics[c] = op.apply(w.statics[c], self);
            }
            for label in &mut w.labels {
                *label = self.forward_target(*label);
            }
        }
        Ok(())
    }

    fn channel_ops(&self, defs: &[ChannelDef]) -> Result<Vec<ChannelOp>> {
        defs.iter()
            .map(|def| {
                let stats = self.channels.get(&def.name).ok_or_else(|| {
                    Error::data(format!("no normalization stats for channel `{}`", def.name))
                })?;
                Ok(match (&def.kind, stats) {
                    (ChannelKind::TargetHistory, _) => ChannelOp::Target,
                    (ChannelKind::Categorical { interner }, ChannelStats::Vocab { values }) => {
                        // interner index -> training vocab index (or unknown)
                        let mut map = vec![values.len(); interner.len() + 1];
                        for (raw_idx, name) in interner.iter().enumerate() {
                            if let Ok(vi) = values.binary_search(name) {
                                map[raw_idx] = vi;
                            }
                        }
                        ChannelOp::Remap(map)
                    }
                    (_, ChannelStats::ZScore { mean, std }) => ChannelOp::ZScore {
                        mean: *mean,
                        std: *std,
                    },
                    (_, ChannelStats::Identity) => ChannelOp::Identity,
                    (kind, stats) => {
                        return Err(Error::data(format!(
                            "channel `{}`: stats {stats:?} do not match kind {kind:?}",
                            def.name
                        )))
                    }
                })
            })
            .collect()
    }

    pub fn forward_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn inverse_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    /// Training vocabulary for a categorical channel (embedding rows).
    pub fn vocab(&self, name: &str) -> Option<&[String]> {
        match self.channels.get(name) {
            Some(ChannelStats::Vocab { values }) => Some(values),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

enum ChannelOp {
    ZScore { mean: f64, std: f64 },
    Identity,
    Target,
    Remap(Vec<usize>),
}

impl ChannelOp {
    fn apply(&self, v: f64, stats: &NormStats) -> f64 {
        match self {
            ChannelOp::ZScore { mean, std } => (v - mean) / std,
            ChannelOp::Identity => v,
            ChannelOp::Target => stats.forward_target(v),
            ChannelOp::Remap(map) => {
                let idx = v as usize;
                *map.get(idx).unwrap_or(map.last().unwrap_or(&0)) as f64
            }
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits on the training windows and applies to `all`, returning the
/// transformed windows and the statistics for later inverse transforms.
pub fn normalize_fit_apply(
    layout: &WindowLayout,
    train: &[Window],
    mut all: Vec<Window>,
) -> Result<(Vec<Window>, NormStats)> {
    let stats = NormStats::fit(layout, train)?;
    stats.apply(layout, &mut all)?;
    Ok((all, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::windows::{TargetHistoryMode, WindowSpec};
    use crate::dataset::{
        Cadence, CatalogEntry, FeatureCatalog, FeatureColumn, Kind, Role, SiteSeries,
        StaticCovariates,
    };
    use crate::timeutil::UtcHour;
    use std::collections::BTreeMap;

    fn mini_world() -> (WindowLayout, Vec<Window>) {
        let catalog = FeatureCatalog {
            target: "GPP".to_string(),
            entries: vec![
                CatalogEntry {
                    name: "TA".to_string(),
                    role: Role::Known,
                    kind: Kind::Real,
                    cadence: Cadence::Hourly,
                },
                CatalogEntry {
                    name: "VEG".to_string(),
                    role: Role::Known,
                    kind: Kind::Categorical,
                    cadence: Cadence::Hourly,
                },
            ],
        };
        let len = 30usize;
        let t0 = UtcHour::from_ymdh(2014, 1, 1, 0).unwrap();
        let mut features = BTreeMap::new();
        features.insert(
            "TA".to_string(),
            FeatureColumn::Real((0..len).map(|i| 5.0 + (i % 4) as f64 * 2.0).collect()),
        );
        features.insert(
            "VEG".to_string(),
            FeatureColumn::Categorical(
                (0..len)
                    .map(|i| Some(if i < 20 { "grass" } else { "shrub" }.to_string()))
                    .collect(),
            ),
        );
        let series = SiteSeries {
            site_id: "S1".to_string(),
            timestamps: (0..len).map(|h| t0.plus_hours(h as i64)).collect(),
            target: (0..len).map(|i| i as f64).collect(),
            gap_flag: vec![0; len],
            features,
            statics: StaticCovariates::new("GRA", "Cfa", "Cfa", 40.0, -100.0).unwrap(),
            estimated_target: None,
        };
        let layout = WindowLayout::fit(
            &catalog,
            std::slice::from_ref(&series),
            WindowSpec::hourly(4),
            TargetHistoryMode::Observed,
        )
        .unwrap();
        let windows =
            super::super::windows::build_windows(&layout, std::slice::from_ref(&series), 1)
                .unwrap();
        (layout, windows)
    }

    #[test]
    fn z_score_example() {
        // value 9 with train mean 5 and std 2 -> 2.0
        let stats = NormStats {
            target_mean: 0.0,
            target_std: 1.0,
            channels: BTreeMap::new(),
            warnings: vec![],
        };
        let op = ChannelOp::ZScore { mean: 5.0, std: 2.0 };
        assert_eq!(op.apply(9.0, &stats), 2.0);
    }

    #[test]
    fn target_round_trip() {
        let (layout, windows) = mini_world();
        let stats = NormStats::fit(&layout, &windows).unwrap();
        for y in [0.0, 1.5, -3.25, 17.0] {
            let z = stats.forward_target(y);
            assert!((stats.inverse_target(z) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unseen_category_maps_to_unknown_index() {
        let (layout, windows) = mini_world();
        // fit on the early windows only: they never see "shrub"
        let train: Vec<Window> = windows[..5].to_vec();
        let stats = NormStats::fit(&layout, &train).unwrap();
        let vocab = stats.vocab("VEG").unwrap();
        assert_eq!(vocab, &["grass".to_string()]);
        let mut all = windows.clone();
        stats.apply(&layout, &mut all).unwrap();
        let veg_col = layout.encoder.iter().position(|c| c.name == "VEG").unwrap();
        let last = all.last().unwrap();
        // "shrub" was unseen in train: unknown index = vocab len = 1
        assert_eq!(last.encoder.at(3, veg_col), 1.0);
        let first = &all[0];
        assert_eq!(first.encoder.at(0, veg_col), 0.0);
    }

    #[test]
    fn constant_feature_floors_std_with_warning() {
        let (layout, windows) = mini_world();
        let mut modified = windows.clone();
        let ta_col = layout.encoder.iter().position(|c| c.name == "TA").unwrap();
        let dec_ta = layout.decoder.iter().position(|c| c.name == "TA").unwrap();
        for w in &mut modified {
            for r in 0..w.encoder.rows() {
                w.encoder.set(r, ta_col, 7.0);
            }
            for r in 0..w.decoder.rows() {
                w.decoder.set(r, dec_ta, 7.0);
            }
        }
        let stats = NormStats::fit(&layout, &modified).unwrap();
        assert!(stats.warnings.iter().any(|w| w.contains("TA")));
        match stats.channels.get("TA").unwrap() {
            ChannelStats::ZScore { std, .. } => assert_eq!(*std, STD_FLOOR),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_flag_passes_through_unnormalized() {
        let (layout, mut windows) = mini_world();
        let stats = NormStats::fit(&layout, &windows).unwrap();
        let flag_col = layout
            .encoder
            .iter()
            .position(|c| c.name == super::super::GAP_FLAG_NAME)
            .unwrap();
        stats.apply(&layout, &mut windows).unwrap();
        for w in &windows {
            for r in 0..w.encoder.rows() {
                let v = w.encoder.at(r, flag_col);
                assert!(v == 0.0 || v == 1.0);
            }
        }
    }

    #[test]
    fn fit_apply_normalizes_labels_and_history_consistently() {
        let (layout, windows) = mini_world();
        let (all, stats) = normalize_fit_apply(&layout, &windows, windows.clone()).unwrap();
        let hist_col = layout
            .encoder
            .iter()
            .position(|c| c.name == super::super::TARGET_HISTORY_NAME)
            .unwrap();
        // encoder history at the last step of window i+1 equals the
        // normalized label of window i (same underlying target value)
        for i in 0..all.len() - 1 {
            let next_hist = all[i + 1].encoder.at(3, hist_col);
            let label = all[i].labels[0];
            assert!((next_hist - label).abs() < 1e-12);
        }
        assert!(stats.target_std > 0.0);
    }
}
