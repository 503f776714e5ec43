//! Tabular featurization for the non-time-aware tree models: one row per
//! timestamp with the current hour's features, calendar fields, and site
//! statics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::ForestModel;
use crate::dataset::{
    FeatureCatalog, FeatureColumn, Kind, SiteSeries, StaticValue, GAP_FLAG_NAME,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularEncoder {
    /// Column names in matrix order.
    pub columns: Vec<String>,
    /// Vocabulary per categorical column; unseen values map to len().
    vocabs: BTreeMap<String, Vec<String>>,
    static_fields: Vec<(String, Kind)>,
    time_varying: Vec<(String, Kind)>,
}

impl TabularEncoder {
    /// Fixes the column order and categorical vocabularies from the catalog
    /// and a fitting series set (normally the training sites).
    pub fn fit(catalog: &FeatureCatalog, series: &[SiteSeries]) -> Result<Self> {
        catalog.validate()?;
        let mut columns = Vec::new();
        let mut vocabs = BTreeMap::new();
        let mut time_varying = Vec::new();
        for entry in catalog.time_varying() {
            columns.push(entry.name.clone());
            time_varying.push((entry.name.clone(), entry.kind));
            if entry.kind == Kind::Categorical {
                let mut values = std::collections::BTreeSet::new();
                for s in series {
                    if let Some(FeatureColumn::Categorical(col)) = s.features.get(&entry.name) {
                        values.extend(col.iter().flatten().cloned());
                    }
                }
                vocabs.insert(entry.name.clone(), values.into_iter().collect());
            }
        }
        for name in ["hour_of_day", "day_of_year", "month", GAP_FLAG_NAME] {
            columns.push(name.to_string());
        }
        let static_fields = catalog.static_fields();
        for (name, kind) in &static_fields {
            columns.push(name.clone());
            if *kind == Kind::Categorical {
                let mut values = std::collections::BTreeSet::new();
                for s in series {
                    if let Some(StaticValue::Cat(v)) = s.statics.static_value(name) {
                        values.insert(v.to_string());
                    }
                }
                vocabs.insert(name.clone(), values.into_iter().collect());
            }
        }
        Ok(TabularEncoder {
            columns,
            vocabs,
            static_fields,
            time_varying,
        })
    }

    fn vocab_index(&self, name: &str, value: &str) -> f64 {
        let vocab = &self.vocabs[name];
        match vocab.binary_search_by(|v| v.as_str().cmp(value)) {
            Ok(i) => i as f64,
            Err(_) => vocab.len() as f64,
        }
    }

    /// One feature row per timestamp. Requires a complete (gap-filled)
    /// series; errors name the offending feature.
    pub fn featurize(&self, series: &SiteSeries) -> Result<Tensor> {
        series.validate()?;
        let n = series.len();
        let mut data = Vec::with_capacity(n * self.columns.len());
        for slot in 0..n {
            for (name, kind) in &self.time_varying {
                let col = series.features.get(name).ok_or_else(|| {
                    Error::data(format!("site {}: missing feature column `{name}`", series.site_id))
                })?;
                match (col, kind) {
                    (FeatureColumn::Real(v), Kind::Real) => {
                        if !v[slot].is_finite() {
                            return Err(Error::data(format!(
                                "site {}: feature `{name}` missing at {}",
                                series.site_id, series.timestamps[slot]
                            )));
                        }
                        data.push(v[slot]);
                    }
                    (FeatureColumn::Categorical(v), Kind::Categorical) => match &v[slot] {
                        Some(s) => data.push(self.vocab_index(name, s)),
                        None => {
                            return Err(Error::data(format!(
                                "site {}: feature `{name}` missing at {}",
                                series.site_id, series.timestamps[slot]
                            )))
                        }
                    },
                    _ => {
                        return Err(Error::data(format!(
                            "site {}: feature `{name}` has unexpected kind",
                            series.site_id
                        )))
                    }
                }
            }
            let ts = series.timestamps[slot];
            data.push(ts.hour_of_day() as f64);
            data.push(ts.day_of_year() as f64);
            data.push(ts.month() as f64);
            data.push(series.gap_flag[slot] as f64);
            for (name, kind) in &self.static_fields {
                match (series.statics.static_value(name), kind) {
                    (Some(StaticValue::Real(v)), Kind::Real) => data.push(v),
                    (Some(StaticValue::Cat(v)), Kind::Categorical) => {
                        data.push(self.vocab_index(name, v))
                    }
                    _ => return Err(Error::data(format!("bad static field `{name}`"))),
                }
            }
        }
        Ok(Tensor::from_vec(&[n, self.columns.len()], data))
    }

    /// (X, y, gap) training triples for the given sites, dropping rows whose
    /// label was synthesized by gap-filling.
    pub fn training_rows(&self, series: &[SiteSeries]) -> Result<(Tensor, Vec<f64>)> {
        let mut rows: Vec<f64> = Vec::new();
        let mut labels = Vec::new();
        let width = self.columns.len();
        for s in series {
            let x = self.featurize(s)?;
            for slot in 0..s.len() {
                if s.gap_flag[slot] != 0 || !s.target[slot].is_finite() {
                    continue;
                }
                rows.extend_from_slice(x.row(slot));
                labels.push(s.target[slot]);
            }
        }
        let n = labels.len();
        Ok((Tensor::from_vec(&[n, width], rows), labels))
    }
}

/// Per-timestamp GPP estimates from a fitted tree model, used as the
/// Estimated target-history channel for hybrid window building.
pub fn predict_history(
    model: &ForestModel,
    encoder: &TabularEncoder,
    series: &SiteSeries,
) -> Result<Vec<f64>> {
    let x = encoder.featurize(series)?;
    super::predict_forest(model, &x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Cadence, CatalogEntry, Role, StaticCovariates};
    use crate::timeutil::UtcHour;
    use crate::trees::{fit_forest, TreeConfig};

    fn catalog() -> FeatureCatalog {
        FeatureCatalog {
            target: "GPP".to_string(),
            entries: vec![CatalogEntry {
                name: "SW_IN".to_string(),
                role: Role::Known,
                kind: Kind::Real,
                cadence: Cadence::Hourly,
            }],
        }
    }

    fn site(id: &str, n: usize, lat: f64) -> SiteSeries {
        let t0 = UtcHour::from_ymdh(2013, 1, 1, 0).unwrap();
        let sw: Vec<f64> = (0..n).map(|i| ((i % 24) as f64 - 6.0).max(0.0) * 40.0).collect();
        let target: Vec<f64> = sw.iter().map(|v| v * 0.02).collect();
        let mut features = BTreeMap::new();
        features.insert("SW_IN".to_string(), FeatureColumn::Real(sw));
        SiteSeries {
            site_id: id.to_string(),
            timestamps: (0..n).map(|h| t0.plus_hours(h as i64)).collect(),
            target,
            features,
            gap_flag: vec![0; n],
            statics: StaticCovariates::new("GRA", "Cfa", "Cfa", lat, -100.0).unwrap(),
            estimated_target: None,
        }
    }

    #[test]
    fn full_length_estimates_on_unseen_site() {
        let train = site("A", 240, 40.0);
        let encoder = TabularEncoder::fit(&catalog(), std::slice::from_ref(&train)).unwrap();
        let (x, y) = encoder.training_rows(std::slice::from_ref(&train)).unwrap();
        let model = fit_forest(&x, &y, &TreeConfig {
            n_trees: 10,
            ..TreeConfig::forest_default(1)
        })
        .unwrap();
        // unseen site B gets a full-length estimate column
        let test = site("B", 120, -20.0);
        let est = predict_history(&model, &encoder, &test).unwrap();
        assert_eq!(est.len(), test.len());
        assert!(est.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_model_gives_constant_column() {
        let train = site("A", 100, 40.0);
        let encoder = TabularEncoder::fit(&catalog(), std::slice::from_ref(&train)).unwrap();
        let (x, _) = encoder.training_rows(std::slice::from_ref(&train)).unwrap();
        let y = vec![3.3; x.rows()];
        let model = fit_forest(&x, &y, &TreeConfig::forest_default(0)).unwrap();
        let est = predict_history(&model, &encoder, &train).unwrap();
        assert!(est.iter().all(|v| (v - 3.3).abs() < 1e-12));
    }

    #[test]
    fn missing_feature_column_errors() {
        let train = site("A", 50, 40.0);
        let encoder = TabularEncoder::fit(&catalog(), std::slice::from_ref(&train)).unwrap();
        let mut incomplete = train.clone();
        incomplete.features.clear();
        let (x, y) = encoder.training_rows(std::slice::from_ref(&train)).unwrap();
        let model = fit_forest(&x, &y, &TreeConfig {
            n_trees: 2,
            ..TreeConfig::forest_default(0)
        })
        .unwrap();
        let err = predict_history(&model, &encoder, &incomplete).unwrap_err();
        assert!(err.to_string().contains("SW_IN"));
    }

    #[test]
    fn gap_flagged_rows_excluded_from_training() {
        let mut train = site("A", 60, 40.0);
        train.gap_flag[10] = 1;
        train.gap_flag[11] = 1;
        let encoder = TabularEncoder::fit(&catalog(), std::slice::from_ref(&train)).unwrap();
        let (x, y) = encoder.training_rows(std::slice::from_ref(&train)).unwrap();
        assert_eq!(y.len(), 58);
        assert_eq!(x.rows(), 58);
    }
}
