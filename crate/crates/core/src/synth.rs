//! Deterministic synthetic flux-site generator.
//!
//! Produces GPP-like hourly targets driven by a clear-sky diurnal radiation
//! curve, a seasonal/diurnal temperature field, and slow vegetation indices,
//! plus injected missing cells and sequence gaps for exercising the
//! imputation stage. Output is reproducible byte-for-byte given a seed and
//! can be written in the same CSV schema the ingestion stage consumes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{
    Cadence, CatalogEntry, FeatureCatalog, FeatureColumn, Kind, Role, SiteSeries,
    StaticCovariates,
};
use crate::error::{Error, Result};
use crate::timeutil::UtcHour;

/// Per-site generation parameters exposed so tests can verify that feature
/// importance recovers the true drivers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiteGroundTruth {
    pub site_id: String,
    pub igbp: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Site amplitude multiplier, only partially explained by latitude.
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Names of the features that causally drive the target.
    pub drivers: Vec<String>,
    pub sites: Vec<SiteGroundTruth>,
}

/// The feature catalog matching the generator's output.
pub fn default_catalog() -> FeatureCatalog {
    let entry = |name: &str, cadence| CatalogEntry {
        name: name.to_string(),
        role: Role::Known,
        kind: Kind::Real,
        cadence,
    };
    FeatureCatalog {
        target: "GPP".to_string(),
        entries: vec![
            entry("SW_IN", Cadence::Hourly),
            entry("TA", Cadence::Hourly),
            entry("NDVI", Cadence::Daily),
            entry("LAI", Cadence::FourDay),
        ],
    }
}

const GROUPS: [(&str, f64, f64, f64); 8] = [
    // (igbp, band center latitude, band half-width, amplitude)
    ("DBF", 44.0, 6.0, 28.0),
    ("GRA", 38.0, 8.0, 20.0),
    ("ENF", 54.0, 8.0, 22.0),
    ("EBF", 2.0, 8.0, 30.0),
    ("WET", 48.0, 6.0, 15.0),
    ("CRO", 36.0, 6.0, 26.0),
    ("SAV", -14.0, 6.0, 18.0),
    ("SHR", -28.0, 6.0, 10.0),
];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Saturating light response; exactly 0 at zero radiation.
fn light_response(sw: f64) -> f64 {
    sw / (sw + 250.0)
}

fn temp_response(t: f64) -> f64 {
    let d = (t - 22.0) / 14.0;
    (-d * d).exp()
}

/// Clear-sky factor: cosine of solar zenith from latitude, declination and
/// local solar hour; clamped at zero for night.
fn cos_zenith(lat_rad: f64, doy: f64, solar_hour: f64) -> f64 {
    let decl = -23.44f64.to_radians() * (std::f64::consts::TAU * (doy + 10.0) / 365.25).cos();
    let hour_angle = (15.0 * (solar_hour - 12.0)).to_radians();
    (lat_rad.sin() * decl.sin() + lat_rad.cos() * decl.cos() * hour_angle.cos()).max(0.0)
}

/// Seasonal vegetation factor in [0, 1], peaking mid-summer per hemisphere.
fn season_factor(lat: f64, doy: f64) -> f64 {
    let peak = if lat >= 0.0 { 197.0 } else { 15.0 };
    0.5 * (1.0 + (std::f64::consts::TAU * (doy - peak) / 365.25).cos())
}

/// Generates `n_sites` synthetic flux sites covering `years` of hourly data
/// starting 2012-01-01. `missing_frac` of hourly feature cells are knocked
/// out and `gap_frac` of whole records removed (both exact counts).
pub fn generate_sites(
    n_sites: usize,
    years: f64,
    seed: u64,
    missing_frac: f64,
    gap_frac: f64,
) -> Result<(Vec<SiteSeries>, GroundTruth)> {
    if n_sites == 0 {
        return Err(Error::config("n_sites must be at least 1"));
    }
    if !(0.0..=0.5).contains(&missing_frac) || !(0.0..=0.5).contains(&gap_frac) {
        return Err(Error::config("missing_frac and gap_frac must lie in [0, 0.5]"));
    }
    let n_hours = (years * 8760.0).round() as usize;
    if n_hours < 48 {
        return Err(Error::config("years too small: need at least 48 hours"));
    }
    let mut series = Vec::with_capacity(n_sites);
    let mut truth = GroundTruth {
        drivers: vec!["SW_IN".to_string(), "TA".to_string()],
        sites: Vec::with_capacity(n_sites),
    };
    for i in 0..n_sites {
        let (s, gt) = generate_one(i, n_hours, seed, missing_frac, gap_frac)?;
        series.push(s);
        truth.sites.push(gt);
    }
    Ok((series, truth))
}

fn generate_one(
    index: usize,
    n_hours: usize,
    seed: u64,
    missing_frac: f64,
    gap_frac: f64,
) -> Result<(SiteSeries, SiteGroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ (index as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)));
    let (igbp, band, half_width, group_amp) = GROUPS[index % GROUPS.len()];
    let latitude = (band + rng.gen_range(-half_width..half_width)).clamp(-65.0, 65.0);
    let longitude = rng.gen_range(-179.0..179.0);
    let amplitude = group_amp * (1.0 + 0.35 * rng.gen_range(-1.0..1.0f64));
    let koppen = match latitude.abs() {
        a if a < 15.0 => "A",
        a if a < 35.0 => "B",
        a if a < 55.0 => "C",
        _ => "D",
    };
    let koppen_sub = format!("{koppen}{}", (index % 3) + 1);
    let site_id = format!("SYN-{:03}", index + 1);
    let statics = StaticCovariates::new(igbp, koppen, &koppen_sub, latitude, longitude)?;

    let t0 = UtcHour::from_ymdh(2012, 1, 1, 0).unwrap();
    let lat_rad = latitude.to_radians();
    let solar_offset = longitude / 15.0;

    let mut sw = Vec::with_capacity(n_hours);
    let mut ta = Vec::with_capacity(n_hours);
    let mut ndvi = Vec::with_capacity(n_hours);
    let mut lai = Vec::with_capacity(n_hours);
    let mut gpp = Vec::with_capacity(n_hours);

    // smooth cloud process: AR(1) on a latent value mapped to [0.25, 1]
    let mut cloud_latent: f64 = rng.gen_range(-1.0..1.0);
    // slow multiplicative noise on vegetation
    let mut veg_noise: f64 = 0.0;
    let base_temp = 27.0 - 0.38 * latitude.abs();
    let seasonal_amp = 4.0 + 0.28 * latitude.abs();
    let temp_peak_doy = if latitude >= 0.0 { 197.0 } else { 15.0 };

    for h in 0..n_hours {
        let ts = t0.plus_hours(h as i64);
        let doy = (ts.day_of_year() - 1) as f64 + ts.hour_of_day() as f64 / 24.0;
        let solar_hour = (ts.hour_of_day() as f64 + solar_offset).rem_euclid(24.0);

        cloud_latent = 0.985 * cloud_latent + 0.12 * rng.gen_range(-1.0..1.0f64);
        let transmissivity = 0.625 + 0.375 * cloud_latent.tanh();
        let sw_v = 1000.0 * cos_zenith(lat_rad, doy, solar_hour) * transmissivity;
        sw.push(sw_v);

        let season = (std::f64::consts::TAU * (doy - temp_peak_doy) / 365.25).cos();
        let diurnal = 4.5 * (std::f64::consts::TAU * (solar_hour - 15.0) / 24.0).cos();
        let ta_v = base_temp + seasonal_amp * season + diurnal + 0.6 * rng.gen_range(-1.0..1.0f64);
        ta.push(ta_v);

        if ts.hour_of_day() == 0 || h == 0 {
            veg_noise = 0.95 * veg_noise + 0.02 * rng.gen_range(-1.0..1.0f64);
        }
        let sf = season_factor(latitude, doy);
        let ndvi_now = (0.25 + 0.55 * sf + veg_noise).clamp(0.05, 0.95);
        ndvi.push(ndvi_now);
        lai.push(0.0); // rebuilt below from the daily NDVI values

        let lr = light_response(sw_v);
        let tr = temp_response(ta_v);
        let noise = 1.0 + 0.06 * rng.gen_range(-1.0..1.0f64);
        let g = (amplitude * lr * tr * ndvi_now * noise).max(0.0);
        gpp.push(g);
    }
    // snap NDVI to its daily cadence (constant within each day) and derive
    // LAI on 4-day blocks from the block-start day
    let day_values: Vec<f64> = (0..n_hours).step_by(24).map(|h| ndvi[h]).collect();
    for h in 0..n_hours {
        ndvi[h] = day_values[h / 24];
    }
    for h in 0..n_hours {
        let block_start_day = ((h / 96) * 4).min(day_values.len() - 1);
        let sf_proxy = day_values[block_start_day];
        lai[h] = (0.2 + 6.5 * (sf_proxy - 0.25).max(0.0)).max(0.1);
    }

    // remove whole records as sequence gaps (exact count, preserving the
    // first and last records so the span stays fixed)
    let n_gap = (gap_frac * n_hours as f64).round() as usize;
    let mut removed = vec![false; n_hours];
    let mut remaining = n_gap.min(n_hours.saturating_sub(2));
    while remaining > 0 {
        let len = rng.gen_range(1..=6usize).min(remaining);
        let start = rng.gen_range(1..n_hours - 1);
        let end = (start + len).min(n_hours - 1);
        for flag in removed.iter_mut().take(end).skip(start) {
            if !*flag && remaining > 0 {
                *flag = true;
                remaining -= 1;
            }
        }
    }
    let keep: Vec<usize> = (0..n_hours).filter(|&h| !removed[h]).collect();

    // inject missing cells into the hourly features of surviving records
    // (exact count of the stated fraction)
    let mut features: BTreeMap<String, FeatureColumn> = BTreeMap::new();
    let mut hourly_cols = vec![("SW_IN", sw), ("TA", ta)];
    let total_cells = hourly_cols.len() * keep.len();
    let n_missing = (missing_frac * total_cells as f64).round() as usize;
    let mut cell_indices: Vec<usize> = (0..total_cells).collect();
    for i in 0..n_missing {
        let j = rng.gen_range(i..total_cells);
        cell_indices.swap(i, j);
    }
    for &cell in &cell_indices[..n_missing] {
        let (col, kept_row) = (cell / keep.len(), cell % keep.len());
        hourly_cols[col].1[keep[kept_row]] = f64::NAN;
    }
    for (name, col) in hourly_cols {
        features.insert(name.to_string(), FeatureColumn::Real(col));
    }
    features.insert("NDVI".to_string(), FeatureColumn::Real(ndvi));
    features.insert("LAI".to_string(), FeatureColumn::Real(lai));
    let timestamps: Vec<UtcHour> = keep.iter().map(|&h| t0.plus_hours(h as i64)).collect();
    let target: Vec<f64> = keep.iter().map(|&h| gpp[h]).collect();
    let features: BTreeMap<String, FeatureColumn> = features
        .into_iter()
        .map(|(name, col)| {
            let col = match col {
                FeatureColumn::Real(v) => {
                    FeatureColumn::Real(keep.iter().map(|&h| v[h]).collect())
                }
                FeatureColumn::Categorical(v) => {
                    FeatureColumn::Categorical(keep.iter().map(|&h| v[h].clone()).collect())
                }
            };
            (name, col)
        })
        .collect();

    let n = timestamps.len();
    let series = SiteSeries {
        site_id: site_id.clone(),
        timestamps,
        target,
        features,
        gap_flag: vec![0; n],
        statics,
        estimated_target: None,
    };
    series.validate()?;
    let gt = SiteGroundTruth {
        site_id,
        igbp: igbp.to_string(),
        latitude,
        longitude,
        amplitude,
    };
    Ok((series, gt))
}

/// Writes `sites_meta.csv` and `records.csv` (native cadences: hourly rows
/// for SW_IN/TA/GPP, one NDVI row per present day start, one LAI row per
/// present 4-day block start) plus `ground_truth.json`.
pub fn write_csvs(dir: &Path, series: &[SiteSeries], truth: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::dataset::write_sites_meta(&dir.join("sites_meta.csv"), series)?;
    let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
    w.write_record(["site_id", "timestamp", "feature", "value"])?;
    for s in series {
        for (slot, ts) in s.timestamps.iter().enumerate() {
            let ts_str = ts.to_string();
            let mut push = |feature: &str, v: f64| -> Result<()> {
                if v.is_finite() {
                    w.write_record([s.site_id.as_str(), ts_str.as_str(), feature, &format!("{v}")])?;
                }
                Ok(())
            };
            push("GPP", s.target[slot])?;
            for name in ["SW_IN", "TA"] {
                if let Some(FeatureColumn::Real(col)) = s.features.get(name) {
                    push(name, col[slot])?;
                }
            }
            if ts.hour_of_day() == 0 {
                if let Some(FeatureColumn::Real(col)) = s.features.get("NDVI") {
                    push("NDVI", col[slot])?;
                }
            }
            if ts.0.rem_euclid(96) == 0 {
                if let Some(FeatureColumn::Real(col)) = s.features.get("LAI") {
                    push("LAI", col[slot])?;
                }
            }
        }
    }
    w.flush()?;
    std::fs::write(
        dir.join("ground_truth.json"),
        serde_json::to_string_pretty(truth)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_byte_identical() {
        let (a, _) = generate_sites(3, 0.1, 77, 0.05, 0.03).unwrap();
        let (b, _) = generate_sites(3, 0.1, 77, 0.05, 0.03).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let (c, _) = generate_sites(3, 0.1, 78, 0.05, 0.03).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn gpp_zero_at_night_and_nonnegative() {
        let (series, _) = generate_sites(4, 0.2, 5, 0.0, 0.0).unwrap();
        for s in &series {
            let sw = match &s.features["SW_IN"] {
                FeatureColumn::Real(v) => v,
                _ => panic!(),
            };
            for (slot, &g) in s.target.iter().enumerate() {
                assert!(g >= 0.0);
                if sw[slot] == 0.0 {
                    assert_eq!(g, 0.0, "site {} slot {slot}", s.site_id);
                }
            }
            // nights exist
            assert!(sw.iter().any(|v| *v == 0.0));
        }
    }

    #[test]
    fn southern_site_peaks_in_december_february() {
        let (series, truth) = generate_sites(8, 1.0, 11, 0.0, 0.0).unwrap();
        let southern = truth
            .sites
            .iter()
            .position(|s| s.latitude < -5.0)
            .expect("generator places sites in the southern hemisphere");
        let s = &series[southern];
        let mut monthly = vec![(0.0, 0usize); 13];
        for (slot, ts) in s.timestamps.iter().enumerate() {
            let m = ts.month() as usize;
            monthly[m].0 += s.target[slot];
            monthly[m].1 += 1;
        }
        let means: Vec<f64> = (1..=12)
            .map(|m| monthly[m].0 / monthly[m].1.max(1) as f64)
            .collect();
        let peak_month = means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
            + 1;
        assert!(
            [12, 1, 2].contains(&peak_month),
            "southern peak month {peak_month}"
        );
    }

    #[test]
    fn sites_pairwise_differ() {
        let (series, _) = generate_sites(5, 0.05, 3, 0.0, 0.0).unwrap();
        for i in 0..series.len() {
            for j in i + 1..series.len() {
                assert_ne!(series[i].target, series[j].target);
            }
        }
    }

    #[test]
    fn injected_fractions_are_exact() {
        let (series, _) = generate_sites(2, 0.3, 9, 0.07, 0.04).unwrap();
        let n_hours = (0.3f64 * 8760.0).round() as usize;
        for s in &series {
            let missing: usize = ["SW_IN", "TA"]
                .iter()
                .map(|name| match &s.features[*name] {
                    FeatureColumn::Real(v) => v.iter().filter(|x| x.is_nan()).count(),
                    _ => 0,
                })
                .sum();
            let expected_missing = (0.07 * (2 * s.len()) as f64).round() as usize;
            assert_eq!(missing, expected_missing, "site {}", s.site_id);
            let removed = n_hours - s.len();
            let expected_gap = (0.04 * n_hours as f64).round() as usize;
            assert_eq!(removed, expected_gap);
            // span preserved: first and last record never removed
            assert_eq!(s.span_hours() as usize, n_hours);
        }
    }

    #[test]
    fn piecewise_constant_coarse_features() {
        let (series, _) = generate_sites(1, 0.05, 21, 0.0, 0.0).unwrap();
        let s = &series[0];
        let ndvi = match &s.features["NDVI"] {
            FeatureColumn::Real(v) => v,
            _ => panic!(),
        };
        for day in 0..s.len() / 24 {
            let block = &ndvi[day * 24..(day + 1) * 24];
            assert!(block.iter().all(|v| v == &block[0]));
        }
    }

    #[test]
    fn csv_emission_is_ingestable_and_deterministic() {
        let (series, truth) = generate_sites(2, 0.05, 13, 0.02, 0.02).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_csvs(dir.path(), &series, &truth).unwrap();
        let catalog = default_catalog();
        let ingested = crate::dataset::ingest_csv(
            &dir.path().join("sites_meta.csv"),
            &dir.path().join("records.csv"),
            &catalog,
        )
        .unwrap();
        assert_eq!(ingested.len(), 2);
        for (a, b) in series.iter().zip(&ingested) {
            assert_eq!(a.site_id, b.site_id);
            assert_eq!(a.timestamps, b.timestamps);
            assert_eq!(a.statics, b.statics);
        }
        // byte-identical on re-emission
        let dir2 = tempfile::tempdir().unwrap();
        write_csvs(dir2.path(), &series, &truth).unwrap();
        let a = std::fs::read(dir.path().join("records.csv")).unwrap();
        let b = std::fs::read(dir2.path().join("records.csv")).unwrap();
        assert_eq!(a, b);
    }
}
