//! Encoder/decoder window assembly.
//!
//! A window predicts the target at its origin timestamp from the preceding
//! `k` hours. The encoder block carries declared observed+known features,
//! auto-injected calendar features, the gap flag, and (by mode) a target
//! history channel; the decoder block carries the known features at the
//! predicted positions. Categorical cells hold an index into the layout's
//! interner so window blocks stay plain real matrices.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::{
    FeatureCatalog, FeatureColumn, Kind, Role, SiteSeries, StaticValue, AUTO_TIME_FEATURES,
    GAP_FLAG_NAME, TARGET_HISTORY_NAME,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::timeutil::UtcHour;

/// How the encoder's target-history channel is populated.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetHistoryMode {
    /// Past target values feed the encoder (non-upscaling benchmark).
    Observed,
    /// No target history channel at all; the model cannot read past
    /// targets by construction.
    None,
    /// Tree-model estimates substitute for the unavailable history.
    Estimated,
}

impl TargetHistoryMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(Self::Observed),
            "none" => Ok(Self::None),
            "estimated" => Ok(Self::Estimated),
            other => Err(Error::config(format!("unknown target-history mode `{other}`"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Encoder length k in hours.
    pub encoder_length: usize,
    /// Decoder length tau; 1 for all replication experiments.
    pub decoder_length: usize,
    /// Maximum horizon; must equal the decoder length.
    pub max_horizon: usize,
}

impl WindowSpec {
    pub fn hourly(k: usize) -> Self {
        WindowSpec {
            encoder_length: k,
            decoder_length: 1,
            max_horizon: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_length == 0 || self.decoder_length == 0 {
            return Err(Error::config("window lengths must be positive"));
        }
        if self.decoder_length != self.max_horizon {
            return Err(Error::config(
                "decoder_length must equal max_horizon in this pipeline",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChannelKind {
    /// Plain real value; z-scored with training statistics.
    Real,
    /// Binary indicator; passed through untouched.
    Flag,
    /// Interner index; remapped to the training vocabulary.
    Categorical { interner: Vec<String> },
    /// Past target values; shares the target's normalization.
    TargetHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDef {
    pub name: String,
    pub kind: ChannelKind,
}

impl ChannelDef {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ChannelKind::Categorical { .. })
    }
}

/// Frozen channel order plus categorical interners; everything needed to
/// assemble windows identically at training and prediction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLayout {
    pub spec: WindowSpec,
    pub mode: TargetHistoryMode,
    pub target: String,
    pub encoder: Vec<ChannelDef>,
    pub decoder: Vec<ChannelDef>,
    pub statics: Vec<ChannelDef>,
}

impl WindowLayout {
    /// Builds the layout from the catalog, interning categorical values
    /// over the given series set. Channel order: declared observed, declared
    /// known, auto calendar features, gap flag, then the target history.
    pub fn fit(
        catalog: &FeatureCatalog,
        series: &[SiteSeries],
        spec: WindowSpec,
        mode: TargetHistoryMode,
    ) -> Result<Self> {
        catalog.validate()?;
        spec.validate()?;
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        for entry in catalog.time_varying() {
            let kind = match entry.kind {
                Kind::Real => ChannelKind::Real,
                Kind::Categorical => ChannelKind::Categorical {
                    interner: intern_feature(series, &entry.name),
                },
            };
            let def = ChannelDef {
                name: entry.name.clone(),
                kind,
            };
            encoder.push(def.clone());
            if entry.role == Role::Known {
                decoder.push(def);
            }
        }
        for name in AUTO_TIME_FEATURES {
            let def = ChannelDef {
                name: name.to_string(),
                kind: ChannelKind::Real,
            };
            encoder.push(def.clone());
            decoder.push(def);
        }
        encoder.push(ChannelDef {
            name: GAP_FLAG_NAME.to_string(),
            kind: ChannelKind::Flag,
        });
        if mode != TargetHistoryMode::None {
            encoder.push(ChannelDef {
                name: TARGET_HISTORY_NAME.to_string(),
                kind: ChannelKind::TargetHistory,
            });
        }
        let mut statics = Vec::new();
        for (field, kind) in catalog.static_fields() {
            let kind = match kind {
                Kind::Real => ChannelKind::Real,
                Kind::Categorical => ChannelKind::Categorical {
                    interner: intern_static(series, &field),
                },
            };
            statics.push(ChannelDef { name: field, kind });
        }
        Ok(WindowLayout {
            spec,
            mode,
            target: catalog.target.clone(),
            encoder,
            decoder,
            statics,
        })
    }

    pub fn n_encoder_channels(&self) -> usize {
        self.encoder.len()
    }

    pub fn n_decoder_channels(&self) -> usize {
        self.decoder.len()
    }
}

fn intern_feature(series: &[SiteSeries], name: &str) -> Vec<String> {
    let mut values = BTreeSet::new();
    for s in series {
        if let Some(FeatureColumn::Categorical(col)) = s.features.get(name) {
            for v in col.iter().flatten() {
                values.insert(v.clone());
            }
        }
    }
    values.into_iter().collect()
}

fn intern_static(series: &[SiteSeries], field: &str) -> Vec<String> {
    let mut values = BTreeSet::new();
    for s in series {
        if let Some(StaticValue::Cat(v)) = s.statics.static_value(field) {
            values.insert(v.to_string());
        }
    }
    values.into_iter().collect()
}

fn intern_index(interner: &[String], value: &str) -> f64 {
    match interner.binary_search_by(|v| v.as_str().cmp(value)) {
        Ok(i) => i as f64,
        Err(_) => interner.len() as f64, // unseen value
    }
}

/// One training/inference sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub site_id: String,
    /// First predicted timestamp.
    pub origin: UtcHour,
    /// (k x m_enc)
    pub encoder: Tensor,
    /// (tau x m_dec)
    pub decoder: Tensor,
    pub statics: Vec<f64>,
    /// Target at the tau decoder positions (raw until normalization).
    pub labels: Vec<f64>,
    /// Gap flag at the label positions; flagged labels are excluded from
    /// training loss and evaluation by default.
    pub label_gap: Vec<bool>,
}

/// Number of windows a series of `len` steps yields.
pub fn window_count(len: usize, k: usize, tau: usize, stride: usize) -> usize {
    if len < k + tau {
        0
    } else {
        (len - k - tau) / stride + 1
    }
}

/// Enumerates windows for every site at the given stride. Requires gap-free
/// series; under Estimated mode every site must carry tree predictions.
pub fn build_windows(
    layout: &WindowLayout,
    series: &[SiteSeries],
    stride: usize,
) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    let mut out = Vec::new();
    for s in series {
        out.extend(build_site_windows(layout, s, stride)?);
    }
    Ok(out)
}

fn build_site_windows(
    layout: &WindowLayout,
    series: &SiteSeries,
    stride: usize,
) -> Result<Vec<Window>> {
    series.validate()?;
    if !series.is_contiguous_hourly() {
        return Err(Error::data(format!(
            "site {}: series has sequence gaps; run gap-filling first",
            series.site_id
        )));
    }
    let k = layout.spec.encoder_length;
    let tau = layout.spec.decoder_length;
    let len = series.len();
    let n_windows = window_count(len, k, tau, stride);
    if n_windows == 0 {
        return Ok(Vec::new());
    }
    if layout.mode == TargetHistoryMode::Estimated && series.estimated_target.is_none() {
        return Err(Error::data(format!(
            "site {}: estimated target-history mode requires tree predictions",
            series.site_id
        )));
    }

    // resolve feature columns once per site, in channel order
    let encoder_cols = resolve_columns(layout, series, &layout.encoder)?;
    let decoder_cols = resolve_columns(layout, series, &layout.decoder)?;
    let statics = encode_statics(layout, series)?;

    let mut windows = Vec::with_capacity(n_windows);
    let mut origin_idx = k;
    while origin_idx + tau <= len {
        let mut encoder = Tensor::zeros(&[k, layout.encoder.len()]);
        for (c, col) in encoder_cols.iter().enumerate() {
            for step in 0..k {
                let pos = origin_idx - k + step;
                let v = col.value_at(series, pos, pos as i64 - origin_idx as i64)?;
                encoder.set(step, c, v);
            }
        }
        let mut decoder = Tensor::zeros(&[tau, layout.decoder.len()]);
        for (c, col) in decoder_cols.iter().enumerate() {
            for step in 0..tau {
                let pos = origin_idx + step;
                let v = col.value_at(series, pos, step as i64)?;
                decoder.set(step, c, v);
            }
        }
        let labels: Vec<f64> = (0..tau).map(|j| series.target[origin_idx + j]).collect();
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "site {}: missing target at {}; run gap-filling first",
                series.site_id, series.timestamps[origin_idx]
            )));
        }
        let label_gap: Vec<bool> = (0..tau)
            .map(|j| series.gap_flag[origin_idx + j] != 0)
            .collect();
        windows.push(Window {
            site_id: series.site_id.clone(),
            origin: series.timestamps[origin_idx],
            encoder,
            decoder,
            statics: statics.clone(),
            labels,
            label_gap,
        });
        origin_idx += stride;
    }
    debug_assert_eq!(windows.len(), n_windows);
    Ok(windows)
}

enum ColumnSource<'a> {
    Real(&'a [f64], &'a str),
    Categorical(&'a [Option<String>], &'a [String]),
    HourOfDay,
    DayOfYear,
    Month,
    RelativeIndex,
    GlobalIndex,
    GapFlag,
    TargetHistory,
}

impl ColumnSource<'_> {
    fn value_at(&self, series: &SiteSeries, pos: usize, rel: i64) -> Result<f64> {
        let v = match self {
            ColumnSource::Real(col, name) => {
                let v = col[pos];
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "site {}: feature `{name}` missing at {}; run gap-filling first",
                        series.site_id, series.timestamps[pos]
                    )));
                }
                v
            }
            ColumnSource::Categorical(col, interner) => match &col[pos] {
                Some(v) => intern_index(interner, v),
                None => {
                    return Err(Error::data(format!(
                        "site {}: categorical cell missing at {}; run gap-filling first",
                        series.site_id, series.timestamps[pos]
                    )))
                }
            },
            ColumnSource::HourOfDay => series.timestamps[pos].hour_of_day() as f64,
            ColumnSource::DayOfYear => series.timestamps[pos].day_of_year() as f64,
            ColumnSource::Month => series.timestamps[pos].month() as f64,
            ColumnSource::RelativeIndex => rel as f64,
            ColumnSource::GlobalIndex => series.timestamps[pos].0 as f64,
            ColumnSource::GapFlag => series.gap_flag[pos] as f64,
            ColumnSource::TargetHistory => {
                let col = match series.estimated_target.as_deref() {
                    Some(est) => est,
                    None => &series.target,
                };
                let v = col[pos];
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "site {}: target history missing at {}",
                        series.site_id, series.timestamps[pos]
                    )));
                }
                v
            }
        };
        Ok(v)
    }
}

fn resolve_columns<'a>(
    layout: &'a WindowLayout,
    series: &'a SiteSeries,
    defs: &'a [ChannelDef],
) -> Result<Vec<ColumnSource<'a>>> {
    defs.iter()
        .map(|def| {
            Ok(match (def.name.as_str(), &def.kind) {
                ("hour_of_day", _) => ColumnSource::HourOfDay,
                ("day_of_year", _) => ColumnSource::DayOfYear,
                ("month", _) => ColumnSource::Month,
                ("relative_time_index", _) => ColumnSource::RelativeIndex,
                ("global_time_index", _) => ColumnSource::GlobalIndex,
                (GAP_FLAG_NAME, _) => ColumnSource::GapFlag,
                (TARGET_HISTORY_NAME, _) => {
                    debug_assert!(layout.mode != TargetHistoryMode::None);
                    ColumnSource::TargetHistory
                }
                (name, ChannelKind::Categorical { interner }) => {
                    match series.features.get(name) {
                        Some(FeatureColumn::Categorical(col)) => {
                            ColumnSource::Categorical(col, interner)
                        }
                        _ => {
                            return Err(Error::data(format!(
                                "site {}: missing categorical feature `{name}`",
                                series.site_id
                            )))
                        }
                    }
                }
                (name, _) => match series.features.get(name) {
                    Some(FeatureColumn::Real(col)) => ColumnSource::Real(col, &def.name),
                    _ => {
                        return Err(Error::data(format!(
                            "site {}: missing feature `{name}`",
                            series.site_id
                        )))
                    }
                },
            })
        })
        .collect()
}

fn encode_statics(layout: &WindowLayout, series: &SiteSeries) -> Result<Vec<f64>> {
    layout
        .statics
        .iter()
        .map(|def| {
            let value = series.statics.static_value(&def.name).ok_or_else(|| {
                Error::data(format!("unknown static field `{}`", def.name))
            })?;
            Ok(match (value, &def.kind) {
                (StaticValue::Real(v), _) => v,
                (StaticValue::Cat(v), ChannelKind::Categorical { interner }) => {
                    intern_index(interner, v)
                }
                (StaticValue::Cat(_), _) => {
                    return Err(Error::data(format!(
                        "static field `{}` is categorical",
                        def.name
                    )))
                }
            })
        })
        .collect()
}

/// Convenience wrapper: fits the layout on the given series and builds all
/// windows in one call.
pub fn build_windows_with_catalog(
    series: &[SiteSeries],
    spec: WindowSpec,
    catalog: &FeatureCatalog,
    mode: TargetHistoryMode,
    stride: usize,
) -> Result<(WindowLayout, Vec<Window>)> {
    let layout = WindowLayout::fit(catalog, series, spec, mode)?;
    let windows = build_windows(&layout, series, stride)?;
    Ok((layout, windows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Cadence, CatalogEntry, StaticCovariates};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn catalog() -> FeatureCatalog {
        FeatureCatalog {
            target: "GPP".to_string(),
            entries: vec![
                CatalogEntry {
                    name: "SW_IN".to_string(),
                    role: Role::Known,
                    kind: Kind::Real,
                    cadence: Cadence::Hourly,
                },
                CatalogEntry {
                    name: "TA".to_string(),
                    role: Role::Observed,
                    kind: Kind::Real,
                    cadence: Cadence::Hourly,
                },
            ],
        }
    }

    fn series(len: usize) -> SiteSeries {
        let t0 = UtcHour::from_ymdh(2014, 1, 1, 0).unwrap();
        let mut features = BTreeMap::new();
        features.insert(
            "SW_IN".to_string(),
            FeatureColumn::Real((0..len).map(|i| (i as f64 * 0.26).sin()).collect()),
        );
        features.insert(
            "TA".to_string(),
            FeatureColumn::Real((0..len).map(|i| 15.0 + (i as f64 * 0.1).cos()).collect()),
        );
        SiteSeries {
            site_id: "S1".to_string(),
            timestamps: (0..len).map(|h| t0.plus_hours(h as i64)).collect(),
            target: (0..len).map(|i| i as f64 * 0.01).collect(),
            gap_flag: vec![0; len],
            features,
            statics: StaticCovariates::new("GRA", "Cfa", "Cfa", 36.6, -97.5).unwrap(),
            estimated_target: None,
        }
    }

    #[test]
    fn boundary_window_count() {
        let spec = WindowSpec::hourly(168);
        let s = series(169);
        let layout = WindowLayout::fit(&catalog(), &[s.clone()], spec, TargetHistoryMode::Observed).unwrap();
        let w = build_windows(&layout, &[s], 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].origin, UtcHour::from_ymdh(2014, 1, 8, 0).unwrap());
        assert_eq!(w[0].labels, vec![1.68]);
    }

    #[test]
    fn window_count_200_hours() {
        let spec = WindowSpec::hourly(168);
        let s = series(200);
        let layout = WindowLayout::fit(&catalog(), &[s.clone()], spec, TargetHistoryMode::Observed).unwrap();
        let w = build_windows(&layout, &[s], 1).unwrap();
        assert_eq!(w.len(), 32); // 200 - 169 + 1
    }

    #[test]
    fn count_formula_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let len = rng.gen_range(1..400usize);
            let k = rng.gen_range(1..50usize);
            let tau = rng.gen_range(1..4usize);
            let stride = rng.gen_range(1..20usize);
            // brute force: enumerate valid origins directly
            let mut count = 0usize;
            let mut o = k;
            while o + tau <= len {
                count += 1;
                o += stride;
            }
            assert_eq!(window_count(len, k, tau, stride), count, "len={len} k={k} tau={tau} stride={stride}");
        }
    }

    #[test]
    fn mode_none_drops_exactly_one_encoder_channel() {
        let spec = WindowSpec::hourly(24);
        let s = series(30);
        let with = WindowLayout::fit(&catalog(), &[s.clone()], spec, TargetHistoryMode::Observed).unwrap();
        let without = WindowLayout::fit(&catalog(), &[s], spec, TargetHistoryMode::None).unwrap();
        assert_eq!(with.n_encoder_channels(), without.n_encoder_channels() + 1);
        assert!(without.encoder.iter().all(|c| c.name != TARGET_HISTORY_NAME));
        assert_eq!(with.n_decoder_channels(), without.n_decoder_channels());
    }

    #[test]
    fn estimated_mode_requires_predictions() {
        let spec = WindowSpec::hourly(24);
        let s = series(48);
        let layout = WindowLayout::fit(&catalog(), &[s.clone()], spec, TargetHistoryMode::Estimated).unwrap();
        assert!(build_windows(&layout, &[s.clone()], 1).is_err());
        let mut with_est = s;
        with_est.estimated_target = Some(vec![0.5; 48]);
        let w = build_windows(&layout, &[with_est], 1).unwrap();
        assert_eq!(w.len(), 24);
        // history channel (last) carries the estimates, not the raw target
        let hist_col = layout.encoder.len() - 1;
        assert_eq!(w[0].encoder.at(0, hist_col), 0.5);
    }

    #[test]
    fn gap_flag_channel_always_present_and_windows_stay_within_site() {
        let spec = WindowSpec::hourly(24);
        let mut s1 = series(60);
        let mut s2 = series(60);
        s2.site_id = "S2".to_string();
        s1.gap_flag[40] = 1;
        s2.target[0] = 123.0;
        let layout = WindowLayout::fit(&catalog(), &[s1.clone(), s2.clone()], spec, TargetHistoryMode::None).unwrap();
        let flag_col = layout
            .encoder
            .iter()
            .position(|c| c.name == GAP_FLAG_NAME)
            .unwrap();
        let w = build_windows(&layout, &[s1, s2], 1).unwrap();
        assert_eq!(w.len(), 72);
        for win in &w {
            // windows never straddle sites: every window's encoder gap flags
            // must match its own site's flags
            if win.site_id == "S2" {
                let col_vals: Vec<f64> = (0..24).map(|r| win.encoder.at(r, flag_col)).collect();
                assert!(col_vals.iter().all(|v| *v == 0.0));
            }
        }
        // label gap propagates
        let flagged: Vec<&Window> = w
            .iter()
            .filter(|win| win.site_id == "S1" && win.label_gap[0])
            .collect();
        assert_eq!(flagged.len(), 1);
    }

    #[test]
    fn non_contiguous_series_rejected() {
        let spec = WindowSpec::hourly(4);
        let mut s = series(20);
        s.timestamps[10] = s.timestamps[10].plus_hours(5);
        // keep strictly increasing
        for i in 11..20 {
            s.timestamps[i] = s.timestamps[i].plus_hours(6);
        }
        let layout = WindowLayout::fit(&catalog(), &[s.clone()], spec, TargetHistoryMode::None).unwrap();
        assert!(build_windows(&layout, &[s], 1).is_err());
    }

    #[test]
    fn relative_index_and_calendar_channels() {
        let spec = WindowSpec::hourly(3);
        let s = series(10);
        let layout = WindowLayout::fit(&catalog(), &[s.clone()], spec, TargetHistoryMode::None).unwrap();
        let w = build_windows(&layout, &[s], 1).unwrap();
        let idx_of = |name: &str| layout.encoder.iter().position(|c| c.name == name).unwrap();
        let rel = idx_of("relative_time_index");
        let hod = idx_of("hour_of_day");
        let first = &w[0];
        assert_eq!(
            (0..3).map(|r| first.encoder.at(r, rel)).collect::<Vec<_>>(),
            vec![-3.0, -2.0, -1.0]
        );
        // origin is hour 3, so encoder hours are 0,1,2
        assert_eq!(
            (0..3).map(|r| first.encoder.at(r, hod)).collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0]
        );
        let drel = layout.decoder.iter().position(|c| c.name == "relative_time_index").unwrap();
        assert_eq!(first.decoder.at(0, drel), 0.0);
    }
}
