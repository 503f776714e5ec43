//! Long-format CSV ingestion onto the common hourly grid.
//!
//! Two files describe a dataset:
//!   - sites metadata: `site_id,igbp,koppen,koppen_sub,lat,lon`
//!   - records:        `site_id,timestamp,feature,value` (long format)
//!
//! Features at coarser cadence forward-fill onto the hourly grid for
//! exactly one cadence block (a daily value covers its 24 hours); grid
//! slots beyond a block stay missing for the imputer to handle. Missing
//! values are represented by the absence of a row.

use std::collections::BTreeMap;
use std::path::Path;

use super::{FeatureCatalog, FeatureColumn, Kind, SiteSeries, StaticCovariates};
use crate::error::{Error, Result};
use crate::timeutil::UtcHour;

fn csv_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_sites_meta(path: &Path) -> Result<BTreeMap<String, StaticCovariates>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    {
        let headers = reader.headers()?;
        let expected = ["site_id", "igbp", "koppen", "koppen_sub", "lat", "lon"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(csv_err(path, 1, format!("expected header {expected:?}, got {got:?}")));
        }
    }
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, line, e.to_string()))?;
        if rec.len() != 6 {
            return Err(csv_err(path, line, format!("expected 6 fields, got {}", rec.len())));
        }
        let lat: f64 = rec[4]
            .parse()
            .map_err(|_| csv_err(path, line, format!("bad latitude `{}`", &rec[4])))?;
        let lon: f64 = rec[5]
            .parse()
            .map_err(|_| csv_err(path, line, format!("bad longitude `{}`", &rec[5])))?;
        let statics = StaticCovariates::new(&rec[1], &rec[2], &rec[3], lat, lon)
            .map_err(|e| csv_err(path, line, e.to_string()))?;
        if out.insert(rec[0].to_string(), statics).is_some() {
            return Err(csv_err(path, line, format!("duplicate site `{}`", &rec[0])));
        }
    }
    Ok(out)
}

enum RawValue {
    Real(f64),
    Cat(String),
    Missing,
}

/// Ingests the two CSVs into one [`SiteSeries`] per site that has records.
/// Sites present in records but absent from metadata are an error; unknown
/// feature names are rejected.
pub fn ingest_csv(
    sites_meta_path: &Path,
    records_path: &Path,
    catalog: &FeatureCatalog,
) -> Result<Vec<SiteSeries>> {
    catalog.validate()?;
    let metas = read_sites_meta(sites_meta_path)?;

    // site -> feature -> rows (timestamp, value)
    type Rows = BTreeMap<String, BTreeMap<UtcHour, RawValue>>;
    let mut per_site: BTreeMap<String, Rows> = BTreeMap::new();

    if std::fs::metadata(records_path)?.len() > 0 {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(records_path)?;
        {
            let headers = reader.headers()?;
            let expected = ["site_id", "timestamp", "feature", "value"];
            let got: Vec<&str> = headers.iter().collect();
            if got != expected {
                return Err(csv_err(records_path, 1, format!("expected header {expected:?}, got {got:?}")));
            }
        }
        for (i, rec) in reader.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| csv_err(records_path, line, e.to_string()))?;
            if rec.len() != 4 {
                return Err(csv_err(records_path, line, format!("expected 4 fields, got {}", rec.len())));
            }
            let site = &rec[0];
            let ts = UtcHour::parse(&rec[1]).map_err(|e| csv_err(records_path, line, e.to_string()))?;
            let feature = &rec[2];
            if !metas.contains_key(site) {
                return Err(csv_err(
                    records_path,
                    line,
                    format!("site `{site}` not present in site metadata"),
                ));
            }
            let kind = if feature == catalog.target {
                Kind::Real
            } else {
                match catalog.entry(feature) {
                    Some(e) if e.role != super::Role::Static => e.kind,
                    _ => {
                        return Err(csv_err(
                            records_path,
                            line,
                            format!("unknown feature `{feature}`"),
                        ))
                    }
                }
            };
            // "NaN" marks an explicitly missing real cell; an empty value
            // marks a missing categorical cell. Both still claim the grid
            // slot and stop an earlier cadence block from covering it.
            let value = match kind {
                Kind::Real => {
                    if rec[3].eq_ignore_ascii_case("nan") {
                        RawValue::Real(f64::NAN)
                    } else {
                        let v: f64 = rec[3].parse().map_err(|_| {
                            csv_err(records_path, line, format!("bad value `{}`", &rec[3]))
                        })?;
                        if !v.is_finite() {
                            return Err(csv_err(records_path, line, "non-finite value"));
                        }
                        RawValue::Real(v)
                    }
                }
                Kind::Categorical => {
                    if rec[3].is_empty() {
                        RawValue::Missing
                    } else {
                        RawValue::Cat(rec[3].to_string())
                    }
                }
            };
            let feature_rows = per_site
                .entry(site.to_string())
                .or_default()
                .entry(feature.to_string())
                .or_default();
            if feature_rows.insert(ts, value).is_some() {
                return Err(csv_err(
                    records_path,
                    line,
                    format!("duplicate record ({site}, {ts}, {feature})"),
                ));
            }
        }
    }

    let mut out = Vec::new();
    for (site_id, rows) in per_site {
        let statics = metas.get(&site_id).expect("checked above").clone();
        // grid = all distinct row timestamps for this site
        let mut grid: Vec<UtcHour> = rows
            .values()
            .flat_map(|m| m.keys().copied())
            .collect();
        grid.sort_unstable();
        grid.dedup();
        let n = grid.len();

        let mut target = vec![f64::NAN; n];
        if let Some(target_rows) = rows.get(&catalog.target) {
            for (slot, ts) in grid.iter().enumerate() {
                if let Some(RawValue::Real(v)) = target_rows.get(ts) {
                    target[slot] = *v;
                }
            }
        }

        let mut features: BTreeMap<String, FeatureColumn> = BTreeMap::new();
        for entry in catalog.time_varying() {
            let block = entry
                .cadence
                .hours()
                .expect("validated: time-varying cadence");
            let feature_rows = rows.get(&entry.name);
            match entry.kind {
                Kind::Real => {
                    let mut col = vec![f64::NAN; n];
                    if let Some(fr) = feature_rows {
                        fill_column(&grid, fr, block, |slot, v| {
                            col[slot] = match v {
                                RawValue::Real(x) => *x,
                                _ => f64::NAN,
                            };
                        });
                    }
                    features.insert(entry.name.clone(), FeatureColumn::Real(col));
                }
                Kind::Categorical => {
                    let mut col: Vec<Option<String>> = vec![None; n];
                    if let Some(fr) = feature_rows {
                        fill_column(&grid, fr, block, |slot, v| {
                            col[slot] = match v {
                                RawValue::Cat(s) => Some(s.clone()),
                                _ => None,
                            };
                        });
                    }
                    features.insert(entry.name.clone(), FeatureColumn::Categorical(col));
                }
            }
        }

        let series = SiteSeries {
            site_id,
            gap_flag: vec![0; n],
            target,
            features,
            timestamps: grid,
            statics,
            estimated_target: None,
        };
        series.validate()?;
        out.push(series);
    }
    Ok(out)
}

/// Walks the grid and the sorted rows together; each row's value covers
/// grid slots in [t0, t0 + block). A later row overrides within overlap.
fn fill_column(
    grid: &[UtcHour],
    rows: &BTreeMap<UtcHour, RawValue>,
    block: i64,
    mut assign: impl FnMut(usize, &RawValue),
) {
    let sorted: Vec<(&UtcHour, &RawValue)> = rows.iter().collect();
    let mut next = 0usize;
    let mut active: Option<(i64, &RawValue)> = None;
    for (slot, ts) in grid.iter().enumerate() {
        while next < sorted.len() && sorted[next].0 .0 <= ts.0 {
            active = Some((sorted[next].0 .0, sorted[next].1));
            next += 1;
        }
        if let Some((t0, v)) = active {
            if ts.0 < t0 + block {
                assign(slot, v);
            }
        }
    }
}

/// Retains sites with span >= `min_span_hours` and missing-record fraction
/// <= `max_missing_frac`. Defaults: one year (8760) and 0.20.
pub fn filter_sites(
    series: Vec<SiteSeries>,
    min_span_hours: i64,
    max_missing_frac: f64,
) -> Result<Vec<SiteSeries>> {
    if !(0.0..=1.0).contains(&max_missing_frac) {
        return Err(Error::config("max_missing_frac must lie in [0, 1]"));
    }
    Ok(series
        .into_iter()
        .filter(|s| {
            s.span_hours() >= min_span_hours && s.missing_record_fraction() <= max_missing_frac
        })
        .collect())
}

/// Writes site metadata in the ingestion schema.
pub fn write_sites_meta(path: &Path, series: &[SiteSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["site_id", "igbp", "koppen", "koppen_sub", "lat", "lon"])?;
    for s in series {
        w.write_record([
            s.site_id.as_str(),
            s.statics.igbp.as_str(),
            s.statics.koppen.as_str(),
            s.statics.koppen_sub.as_str(),
            &format!("{}", s.statics.latitude),
            &format!("{}", s.statics.longitude),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every grid slot of every column as a long-format row, with `NaN`
/// (real) or an empty value (categorical) marking missing cells. This dump
/// is lossless: re-ingesting with the same catalog reproduces the series
/// exactly, because every hour carries its own row and missing markers stop
/// cadence blocks from bleeding.
pub fn write_records(path: &Path, series: &[SiteSeries], target_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["site_id", "timestamp", "feature", "value"])?;
    for s in series {
        for (slot, ts) in s.timestamps.iter().enumerate() {
            let ts_str = ts.to_string();
            w.write_record([
                s.site_id.as_str(),
                ts_str.as_str(),
                target_name,
                &real_field(s.target[slot]),
            ])?;
            for (name, col) in &s.features {
                match col {
                    FeatureColumn::Real(v) => {
                        w.write_record([
                            s.site_id.as_str(),
                            ts_str.as_str(),
                            name.as_str(),
                            &real_field(v[slot]),
                        ])?;
                    }
                    FeatureColumn::Categorical(v) => {
                        w.write_record([
                            s.site_id.as_str(),
                            ts_str.as_str(),
                            name.as_str(),
                            v[slot].as_deref().unwrap_or(""),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn real_field(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NaN".to_string()
    }
}
