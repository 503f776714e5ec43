//! Canonical data model: per-site hourly series, the feature catalog that
//! declares each input's role and cadence, and encoder/decoder window
//! assembly for model training and inference.

pub mod ingest;
pub mod normalize;
pub mod windows;

pub use ingest::{filter_sites, ingest_csv, write_records, write_sites_meta};
pub use normalize::{normalize_fit_apply, ChannelStats, NormStats};
pub use windows::{
    build_windows, ChannelDef, ChannelKind, TargetHistoryMode, Window, WindowLayout,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::timeutil::UtcHour;

/// Names injected by the window builder; user catalogs cannot declare them.
pub const AUTO_TIME_FEATURES: [&str; 5] = [
    "hour_of_day",
    "day_of_year",
    "month",
    "relative_time_index",
    "global_time_index",
];
pub const GAP_FLAG_NAME: &str = "gap_flag";
pub const TARGET_HISTORY_NAME: &str = "target_history";

/// IGBP label merged into its generic group: open/closed shrublands fold
/// into `SHR`, woody savannas and savannas into `SAV`.
pub fn igbp_generic_of(igbp: &str) -> String {
    match igbp {
        "OSH" | "CSH" => "SHR".to_string(),
        "WSA" | "SAV" => "SAV".to_string(),
        other => other.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticCovariates {
    pub igbp: String,
    pub igbp_generic: String,
    pub koppen: String,
    pub koppen_sub: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl StaticCovariates {
    pub fn new(
        igbp: &str,
        koppen: &str,
        koppen_sub: &str,
        latitude: f64,
        longitude: f64,
    ) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::data(format!("latitude {latitude} out of [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::data(format!("longitude {longitude} out of [-180, 180]")));
        }
        Ok(StaticCovariates {
            igbp: igbp.to_string(),
            igbp_generic: igbp_generic_of(igbp),
            koppen: koppen.to_string(),
            koppen_sub: koppen_sub.to_string(),
            latitude,
            longitude,
        })
    }

    pub fn static_value(&self, field: &str) -> Option<StaticValue<'_>> {
        match field {
            "igbp_generic" => Some(StaticValue::Cat(&self.igbp_generic)),
            "koppen" => Some(StaticValue::Cat(&self.koppen)),
            "koppen_sub" => Some(StaticValue::Cat(&self.koppen_sub)),
            "latitude" => Some(StaticValue::Real(self.latitude)),
            "longitude" => Some(StaticValue::Real(self.longitude)),
            _ => None,
        }
    }
}

pub enum StaticValue<'a> {
    Real(f64),
    Cat(&'a str),
}

/// One feature column: real values use NaN for missing cells, categorical
/// columns use `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureColumn {
    Real(Vec<f64>),
    Categorical(Vec<Option<String>>),
}

impl FeatureColumn {
    pub fn len(&self) -> usize {
        match self {
            FeatureColumn::Real(v) => v.len(),
            FeatureColumn::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One flux-tower entity: hourly target sequence, aligned feature columns,
/// gap flags, and static covariates. Before gap-filling the timestamp grid
/// may have holes; afterwards it is contiguous hourly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSeries {
    pub site_id: String,
    pub timestamps: Vec<UtcHour>,
    /// Target values aligned to `timestamps`; NaN marks missing.
    pub target: Vec<f64>,
    pub features: BTreeMap<String, FeatureColumn>,
    /// 1 where the record was synthesized by gap-filling.
    pub gap_flag: Vec<u8>,
    pub statics: StaticCovariates,
    /// Tree-model GPP estimates, attached for Estimated target-history mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimated_target: Option<Vec<f64>>,
}

impl SiteSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Hours between first and last timestamp inclusive.
    pub fn span_hours(&self) -> i64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b.0 - a.0 + 1,
            _ => 0,
        }
    }

    /// A record counts as missing when its grid slot is absent from the
    /// span or its target value is missing.
    pub fn missing_record_fraction(&self) -> f64 {
        let span = self.span_hours();
        if span == 0 {
            return 1.0;
        }
        let present = self.target.iter().filter(|v| v.is_finite()).count();
        1.0 - present as f64 / span as f64
    }

    pub fn is_contiguous_hourly(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[1].0 == w[0].0 + 1)
    }

    /// Checks the alignment invariants: strictly increasing timestamps and
    /// every column the same length as the grid.
    pub fn validate(&self) -> Result<()> {
        if !self.timestamps.windows(2).all(|w| w[1].0 > w[0].0) {
            return Err(Error::data(format!(
                "site {}: timestamps not strictly increasing",
                self.site_id
            )));
        }
        let n = self.timestamps.len();
        if self.target.len() != n || self.gap_flag.len() != n {
            return Err(Error::data(format!(
                "site {}: target/gap_flag length mismatch",
                self.site_id
            )));
        }
        for (name, col) in &self.features {
            if col.len() != n {
                return Err(Error::data(format!(
                    "site {}: feature `{name}` length {} != {n}",
                    self.site_id,
                    col.len()
                )));
            }
        }
        if let Some(est) = &self.estimated_target {
            if est.len() != n {
                return Err(Error::data(format!(
                    "site {}: estimated target length mismatch",
                    self.site_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Observed,
    Known,
    Static,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Real,
    Categorical,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cadence {
    #[serde(rename = "hourly")]
    Hourly,
    #[serde(rename = "daily")]
    Daily,
    #[serde(rename = "4day")]
    FourDay,
    #[serde(rename = "8day")]
    EightDay,
    #[serde(rename = "16day")]
    SixteenDay,
    #[serde(rename = "monthly")]
    Monthly,
    #[serde(rename = "annual")]
    Annual,
    #[serde(rename = "static")]
    Static,
}

impl Cadence {
    /// Forward-fill block length. Monthly and annual use fixed 30/365-day
    /// blocks rather than calendar months.
    pub fn hours(self) -> Option<i64> {
        match self {
            Cadence::Hourly => Some(1),
            Cadence::Daily => Some(24),
            Cadence::FourDay => Some(96),
            Cadence::EightDay => Some(192),
            Cadence::SixteenDay => Some(384),
            Cadence::Monthly => Some(720),
            Cadence::Annual => Some(8760),
            Cadence::Static => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub role: Role,
    pub kind: Kind,
    pub cadence: Cadence,
}

/// Declares every feature's role, kind, and cadence, plus the reserved
/// target name. Persisted as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub target: String,
    pub entries: Vec<CatalogEntry>,
}

const STATIC_FIELDS: [(&str, Kind); 5] = [
    ("igbp_generic", Kind::Categorical),
    ("koppen", Kind::Categorical),
    ("koppen_sub", Kind::Categorical),
    ("latitude", Kind::Real),
    ("longitude", Kind::Real),
];

impl FeatureCatalog {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::config(format!("duplicate catalog entry `{}`", e.name)));
            }
            if e.name == self.target {
                return Err(Error::config(format!(
                    "target `{}` is reserved and cannot be declared as a feature",
                    self.target
                )));
            }
            let reserved = AUTO_TIME_FEATURES.contains(&e.name.as_str())
                || e.name == GAP_FLAG_NAME
                || e.name == TARGET_HISTORY_NAME;
            if reserved {
                return Err(Error::config(format!(
                    "`{}` is injected automatically and cannot be declared",
                    e.name
                )));
            }
            match e.role {
                Role::Static => {
                    let known = STATIC_FIELDS.iter().find(|(n, _)| *n == e.name);
                    match known {
                        None => {
                            return Err(Error::config(format!(
                                "static entry `{}` does not name a site metadata field",
                                e.name
                            )))
                        }
                        Some((_, kind)) if *kind != e.kind => {
                            return Err(Error::config(format!(
                                "static entry `{}` has wrong kind",
                                e.name
                            )))
                        }
                        _ => {}
                    }
                    if e.cadence != Cadence::Static {
                        return Err(Error::config(format!(
                            "static entry `{}` must use static cadence",
                            e.name
                        )));
                    }
                }
                Role::Observed | Role::Known => {
                    if e.cadence == Cadence::Static {
                        return Err(Error::config(format!(
                            "time-varying entry `{}` cannot use static cadence",
                            e.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Time-varying entries in declaration order.
    pub fn time_varying(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().filter(|e| e.role != Role::Static)
    }

    pub fn entry(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Static model inputs: declared static entries in declaration order,
    /// or all five metadata fields when none are declared.
    pub fn static_fields(&self) -> Vec<(String, Kind)> {
        let declared: Vec<(String, Kind)> = self
            .entries
            .iter()
            .filter(|e| e.role == Role::Static)
            .map(|e| (e.name.clone(), e.kind))
            .collect();
        if declared.is_empty() {
            STATIC_FIELDS
                .iter()
                .map(|(n, k)| (n.to_string(), *k))
                .collect()
        } else {
            declared
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: FeatureCatalog = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn igbp_merge_map() {
        assert_eq!(igbp_generic_of("OSH"), "SHR");
        assert_eq!(igbp_generic_of("CSH"), "SHR");
        assert_eq!(igbp_generic_of("WSA"), "SAV");
        assert_eq!(igbp_generic_of("SAV"), "SAV");
        assert_eq!(igbp_generic_of("DBF"), "DBF");
    }

    #[test]
    fn static_covariates_bounds() {
        assert!(StaticCovariates::new("DBF", "Cfa", "Cfa", 91.0, 0.0).is_err());
        assert!(StaticCovariates::new("DBF", "Cfa", "Cfa", 45.0, -181.0).is_err());
        let s = StaticCovariates::new("WSA", "Aw", "Aw", -12.5, 131.0).unwrap();
        assert_eq!(s.igbp_generic, "SAV");
    }

    #[test]
    fn catalog_validation_rules() {
        let entry = |name: &str, role, kind, cadence| CatalogEntry {
            name: name.to_string(),
            role,
            kind,
            cadence,
        };
        let good = FeatureCatalog {
            target: "GPP".to_string(),
            entries: vec![
                entry("SW_IN", Role::Known, Kind::Real, Cadence::Hourly),
                entry("NDVI", Role::Known, Kind::Real, Cadence::Daily),
                entry("igbp_generic", Role::Static, Kind::Categorical, Cadence::Static),
            ],
        };
        good.validate().unwrap();

        let dup = FeatureCatalog {
            target: "GPP".into(),
            entries: vec![
                entry("A", Role::Known, Kind::Real, Cadence::Hourly),
                entry("A", Role::Observed, Kind::Real, Cadence::Hourly),
            ],
        };
        assert!(dup.validate().is_err());

        let target_as_feature = FeatureCatalog {
            target: "GPP".into(),
            entries: vec![entry("GPP", Role::Known, Kind::Real, Cadence::Hourly)],
        };
        assert!(target_as_feature.validate().is_err());

        let reserved = FeatureCatalog {
            target: "GPP".into(),
            entries: vec![entry("hour_of_day", Role::Known, Kind::Real, Cadence::Hourly)],
        };
        assert!(reserved.validate().is_err());
    }

    #[test]
    fn catalog_json_round_trip() {
        let catalog = FeatureCatalog {
            target: "GPP".to_string(),
            entries: vec![CatalogEntry {
                name: "LAI".to_string(),
                role: Role::Known,
                kind: Kind::Real,
                cadence: Cadence::FourDay,
            }],
        };
        let json = catalog.to_json().unwrap();
        assert!(json.contains("\"4day\""));
        let back = FeatureCatalog::from_json(&json).unwrap();
        assert_eq!(back, catalog);
    }

    #[test]
    fn default_static_fields_when_undeclared() {
        let catalog = FeatureCatalog {
            target: "GPP".into(),
            entries: vec![],
        };
        assert_eq!(catalog.static_fields().len(), 5);
    }
}
