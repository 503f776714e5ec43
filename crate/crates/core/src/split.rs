//! Site-level train/validation/test partitioning, stratified by generic
//! IGBP group, and k-fold CV group construction over the non-test sites.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    /// site_id -> split; every input site appears exactly once.
    pub assignments: BTreeMap<String, Split>,
    /// site_id -> CV fold (0-based), for non-test sites once folds are built.
    pub folds: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn sites_in(&self, split: Split) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn non_test_sites(&self) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, s)| **s != Split::Test)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Persists as CSV `site_id,split,fold` (fold empty for test sites).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["site_id", "split", "fold"])
            .map_err(|e| Error::data(e.to_string()))?;
        for (site, split) in &self.assignments {
            let fold = self
                .folds
                .get(site)
                .map(|f| (f + 1).to_string())
                .unwrap_or_default();
            w.write_record([site.as_str(), split.as_str(), fold.as_str()])
                .map_err(|e| Error::data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = SplitAssignment::default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::data(e.to_string()))?;
            let line = i as u64 + 2;
            let site = rec
                .get(0)
                .ok_or_else(|| Error::data(format!("split csv line {line}: missing site_id")))?;
            let split = match rec.get(1) {
                Some("train") => Split::Train,
                Some("val") => Split::Val,
                Some("test") => Split::Test,
                other => {
                    return Err(Error::data(format!(
                        "split csv line {line}: bad split `{}`",
                        other.unwrap_or("")
                    )))
                }
            };
            out.assignments.insert(site.to_string(), split);
            if let Some(f) = rec.get(2) {
                if !f.is_empty() {
                    let fold: usize = f
                        .parse()
                        .map_err(|_| Error::data(format!("split csv line {line}: bad fold")))?;
                    if fold == 0 {
                        return Err(Error::data(format!("split csv line {line}: folds are 1-based")));
                    }
                    out.folds.insert(site.to_string(), fold - 1);
                }
            }
        }
        Ok(out)
    }
}

fn group_seed(seed: u64, group: &str) -> u64 {
    // FNV-1a over the group name, mixed with the run seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in group.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Largest-remainder apportionment of `n` items over `ratios`.
/// Ties broken by bucket order.
fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % ratios.len()]] += 1;
    }
    counts
}

/// Stratified site split. Within each group sites are shuffled by a seeded
/// RNG and apportioned by largest-remainder rounding of the ratios, so the
/// per-group deviation from the exact quota is below one site.
pub fn stratified_split(
    sites: &[(String, String)],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| *v < 0.0) || r.iter().all(|v| *v == 0.0) {
        return Err(Error::config("split ratios must be non-negative with a positive sum"));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::config("split ratios must sum to 1"));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for (id, _) in sites {
            if !seen.insert(id) {
                return Err(Error::data(format!("duplicate site `{id}` in split input")));
            }
        }
    }

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, group) in sites {
        groups.entry(group.as_str()).or_default().push(id.as_str());
    }

    let n_buckets = r.iter().filter(|v| **v > 0.0).count();
    let mut out = SplitAssignment::default();
    for (group, mut members) in groups {
        members.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed, group));
        members.shuffle(&mut rng);
        let splits = [Split::Train, Split::Val, Split::Test];
        if members.len() < n_buckets {
            out.warnings.push(format!(
                "group `{group}` has {} sites for {n_buckets} split buckets; assigning in train/val/test order",
                members.len()
            ));
            for (i, site) in members.iter().enumerate() {
                out.assignments.insert(site.to_string(), splits[i]);
            }
            continue;
        }
        let counts = apportion(members.len(), &r);
        let mut idx = 0;
        for (bucket, &count) in counts.iter().enumerate() {
            for site in &members[idx..idx + count] {
                out.assignments.insert(site.to_string(), splits[bucket]);
            }
            idx += count;
        }
    }
    Ok(out)
}

/// Partitions the non-test sites of `assignment` into `n_folds` stratified
/// folds. Per group, fold sizes differ by at most one; leftover sites are
/// dealt to folds through a rotating cursor so fold totals stay balanced.
/// Returns fold index (0-based) per site.
pub fn cv_groups(
    sites: &[(String, String)],
    assignment: &SplitAssignment,
    n_folds: usize,
    seed: u64,
) -> Result<BTreeMap<String, usize>> {
    if n_folds < 2 {
        return Err(Error::config("cv_groups: n_folds must be at least 2"));
    }
    let group_of: BTreeMap<&str, &str> = sites
        .iter()
        .map(|(id, g)| (id.as_str(), g.as_str()))
        .collect();
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut total = 0usize;
    for (site, split) in &assignment.assignments {
        if *split == Split::Test {
            continue;
        }
        let g = group_of
            .get(site.as_str())
            .ok_or_else(|| Error::data(format!("site `{site}` missing from group labels")))?;
        groups.entry(g).or_default().push(site.as_str());
        total += 1;
    }
    if n_folds > total {
        return Err(Error::config(format!(
            "cv_groups: {n_folds} folds exceed {total} non-test sites"
        )));
    }

    let mut folds = BTreeMap::new();
    let mut cursor = 0usize;
    for (group, mut members) in groups {
        members.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed ^ 0xf01d_5eed, group));
        members.shuffle(&mut rng);
        let base = members.len() / n_folds;
        let extra = members.len() % n_folds;
        let mut idx = 0;
        for f in 0..n_folds {
            let mut take = base;
            // leftovers go to folds cursor..cursor+extra (mod n_folds)
            let offset = (f + n_folds - cursor % n_folds) % n_folds;
            if offset < extra {
                take += 1;
            }
            for site in &members[idx..idx + take] {
                folds.insert(site.to_string(), f);
            }
            idx += take;
        }
        cursor += extra;
    }
    Ok(folds)
}

/// Training/validation site lists for one fold: validation is the fold
/// itself, training is the remainder.
pub fn fold_train_val(folds: &BTreeMap<String, usize>, fold: usize) -> (Vec<String>, Vec<String>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (site, f) in folds {
        if *f == fold {
            val.push(site.clone());
        } else {
            train.push(site.clone());
        }
    }
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_sites(spec: &[(&str, usize)]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (group, n) in spec {
            for i in 0..*n {
                out.push((format!("{group}-{i:03}"), group.to_string()));
            }
        }
        out
    }

    #[test]
    fn totals_on_129_sites_match_paper_counts() {
        // 8 generic groups totalling 129 sites
        let sites = mk_sites(&[
            ("ENF", 20),
            ("DBF", 20),
            ("GRA", 20),
            ("EBF", 20),
            ("WET", 20),
            ("CRO", 15),
            ("SAV", 6),
            ("SHR", 8),
        ]);
        assert_eq!(sites.len(), 129);
        let a = stratified_split(&sites, (0.605, 0.201, 0.194), 42).unwrap();
        let count = |s: Split| a.assignments.values().filter(|v| **v == s).count();
        assert_eq!(count(Split::Train), 78);
        assert_eq!(count(Split::Val), 26);
        assert_eq!(count(Split::Test), 25);
    }

    #[test]
    fn per_group_deviation_below_one() {
        let sites = mk_sites(&[("A", 13), ("B", 7), ("C", 29), ("D", 4)]);
        let ratios = (0.6, 0.2, 0.2);
        let a = stratified_split(&sites, ratios, 9).unwrap();
        for (group, n) in [("A", 13.0), ("B", 7.0), ("C", 29.0), ("D", 4.0)] {
            for (split, r) in [(Split::Train, 0.6), (Split::Val, 0.2), (Split::Test, 0.2)] {
                let c = a
                    .assignments
                    .iter()
                    .filter(|(id, s)| id.starts_with(group) && **s == split)
                    .count() as f64;
                assert!(
                    (c - r * n).abs() <= 1.0,
                    "group {group} split {split:?}: {c} vs quota {}",
                    r * n
                );
            }
        }
    }

    #[test]
    fn two_equal_groups_all_represented() {
        // exhaustive check of apportionment: each split contains both groups
        let sites = mk_sites(&[("G1", 5), ("G2", 5)]);
        let a = stratified_split(&sites, (0.6, 0.2, 0.2), 3).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            for group in ["G1", "G2"] {
                let c = a
                    .assignments
                    .iter()
                    .filter(|(id, s)| id.starts_with(group) && **s == split)
                    .count();
                assert!(c > 0, "{group} missing from {split:?}");
            }
        }
        // apportion(5, [.6,.2,.2]) = (3,1,1): verify against all rounding options
        assert_eq!(apportion(5, &[0.6, 0.2, 0.2]), vec![3, 1, 1]);
    }

    #[test]
    fn ratio_one_puts_all_in_train() {
        let sites = mk_sites(&[("A", 4), ("B", 3)]);
        let a = stratified_split(&sites, (1.0, 0.0, 0.0), 1).unwrap();
        assert!(a.assignments.values().all(|s| *s == Split::Train));
    }

    #[test]
    fn tiny_group_assigned_in_bucket_order_with_warning() {
        let sites = mk_sites(&[("A", 2), ("B", 9)]);
        let a = stratified_split(&sites, (0.5, 0.25, 0.25), 3).unwrap();
        assert!(!a.warnings.is_empty());
        let in_a: Vec<Split> = a
            .assignments
            .iter()
            .filter(|(id, _)| id.starts_with("A"))
            .map(|(_, s)| *s)
            .collect();
        assert_eq!(in_a.len(), 2);
        assert!(in_a.contains(&Split::Train));
        assert!(in_a.contains(&Split::Val));
    }

    #[test]
    fn determinism_and_partition() {
        let sites = mk_sites(&[("A", 11), ("B", 17), ("C", 5)]);
        let a = stratified_split(&sites, (0.6, 0.2, 0.2), 77).unwrap();
        let b = stratified_split(&sites, (0.6, 0.2, 0.2), 77).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.assignments.len(), sites.len());
        let c = stratified_split(&sites, (0.6, 0.2, 0.2), 78).unwrap();
        assert_ne!(a.assignments, c.assignments); // different seed reshuffles
    }

    #[test]
    fn cv_folds_partition_and_sizes() {
        let sites = mk_sites(&[
            ("ENF", 20),
            ("DBF", 20),
            ("GRA", 20),
            ("EBF", 20),
            ("WET", 20),
            ("CRO", 15),
            ("SAV", 6),
            ("SHR", 8),
        ]);
        let a = stratified_split(&sites, (0.605, 0.201, 0.194), 42).unwrap();
        let folds = cv_groups(&sites, &a, 4, 42).unwrap();
        assert_eq!(folds.len(), 104);
        for f in 0..4 {
            let size = folds.values().filter(|v| **v == f).count();
            assert_eq!(size, 26, "fold {f}");
        }
        // determinism
        let folds2 = cv_groups(&sites, &a, 4, 42).unwrap();
        assert_eq!(folds, folds2);
    }

    #[test]
    fn two_folds_over_two_sites() {
        let sites = mk_sites(&[("A", 2)]);
        let a = stratified_split(&sites, (1.0, 0.0, 0.0), 0).unwrap();
        let folds = cv_groups(&sites, &a, 2, 0).unwrap();
        let f0 = folds.values().filter(|v| **v == 0).count();
        let f1 = folds.values().filter(|v| **v == 1).count();
        assert_eq!((f0, f1), (1, 1));
    }

    #[test]
    fn cv_errors() {
        let sites = mk_sites(&[("A", 3)]);
        let a = stratified_split(&sites, (1.0, 0.0, 0.0), 0).unwrap();
        assert!(cv_groups(&sites, &a, 1, 0).is_err());
        assert!(cv_groups(&sites, &a, 4, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let sites = mk_sites(&[("A", 6), ("B", 6)]);
        let mut a = stratified_split(&sites, (0.5, 0.25, 0.25), 5).unwrap();
        a.folds = cv_groups(&sites, &a, 2, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        a.write_csv(&path).unwrap();
        let b = SplitAssignment::read_csv(&path).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.folds, b.folds);
    }
}
