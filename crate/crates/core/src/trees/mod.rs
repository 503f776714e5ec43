//! Tree ensembles: bagged regression forests and stagewise least-squares
//! boosting, with impurity-based feature importance and top-k selection.

pub mod cart;
pub mod tabular;

pub use tabular::{predict_history, TabularEncoder};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use cart::{grow_tree, GrowParams, Tree};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Fraction(f64),
    Count(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub boosting: bool,
    /// Shrinkage; only used when boosting.
    pub learning_rate: f64,
    /// Row fraction per tree/stage.
    pub subsample: f64,
    pub seed: u64,
}

impl TreeConfig {
    /// Bagged-forest defaults: 200 trees, unlimited depth.
    pub fn forest_default(seed: u64) -> Self {
        TreeConfig {
            n_trees: 200,
            max_depth: None,
            min_samples_leaf: 2,
            max_features: MaxFeatures::All,
            boosting: false,
            learning_rate: 1.0,
            subsample: 1.0,
            seed,
        }
    }

    /// Boosting defaults: depth 6, shrinkage 0.1.
    pub fn boosted_default(seed: u64) -> Self {
        TreeConfig {
            n_trees: 200,
            max_depth: Some(6),
            min_samples_leaf: 2,
            max_features: MaxFeatures::All,
            boosting: true,
            learning_rate: 0.1,
            subsample: 1.0,
            seed,
        }
    }

    fn validate(&self, n_features: usize) -> Result<usize> {
        if self.n_trees == 0 {
            return Err(Error::config("n_trees must be positive"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::config("min_samples_leaf must be positive"));
        }
        if self.boosting && !(0.0 < self.learning_rate && self.learning_rate <= 1.0) {
            return Err(Error::config("learning_rate must lie in (0, 1] when boosting"));
        }
        if !(0.0 < self.subsample && self.subsample <= 1.0) {
            return Err(Error::config("subsample must lie in (0, 1]"));
        }
        let per_split = match self.max_features {
            MaxFeatures::All => n_features,
            MaxFeatures::Fraction(f) => {
                if !(0.0 < f && f <= 1.0) {
                    return Err(Error::config("max_features fraction must lie in (0, 1]"));
                }
                ((f * n_features as f64).ceil() as usize).clamp(1, n_features)
            }
            MaxFeatures::Count(c) => {
                if c == 0 || c > n_features {
                    return Err(Error::config(format!(
                        "max_features count {c} out of range for {n_features} features"
                    )));
                }
                c
            }
        };
        Ok(per_split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub boosting: bool,
    /// Initial prediction for boosting; 0 for bagged forests.
    pub base: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Total variance reduction attributed to each feature during fitting.
    pub raw_importance: Vec<f64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fits a bagged forest (boosting off) or a stagewise least-squares boosted
/// ensemble (boosting on). Deterministic given the config seed.
pub fn fit_forest(x: &Tensor, y: &[f64], cfg: &TreeConfig) -> Result<ForestModel> {
    let n = y.len();
    if n == 0 || x.rows() == 0 {
        return Err(Error::data("fit_forest: empty input"));
    }
    if x.rows() != n {
        return Err(Error::data(format!(
            "fit_forest: {} rows vs {} labels",
            x.rows(),
            n
        )));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("fit_forest: non-finite values in input"));
    }
    let per_split = cfg.validate(x.cols())?;
    let features_per_split = (per_split < x.cols()).then_some(per_split);
    let mut raw_importance = vec![0.0; x.cols()];
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        features_per_split,
    };

    let mut trees = Vec::with_capacity(cfg.n_trees);
    let base = if cfg.boosting {
        y.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };

    if cfg.boosting {
        let mut current: Vec<f64> = vec![base; n];
        for t in 0..cfg.n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ (t as u64).wrapping_mul(0x9e37)));
            let residuals: Vec<f64> = y.iter().zip(&current).map(|(a, b)| a - b).collect();
            let rows = subsample_rows(n, cfg.subsample, &mut rng);
            let tree = grow_tree(x, &residuals, &rows, &params, &mut rng, &mut raw_importance);
            for (r, c) in current.iter_mut().enumerate() {
                *c += cfg.learning_rate * tree.predict_row(x.row(r));
            }
            trees.push(tree);
        }
    } else {
        for t in 0..cfg.n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ (t as u64).wrapping_mul(0x9e37)));
            let rows: Vec<usize> = (0..bootstrap_size(n, cfg.subsample))
                .map(|_| rng.gen_range(0..n))
                .collect();
            let tree = grow_tree(x, y, &rows, &params, &mut rng, &mut raw_importance);
            trees.push(tree);
        }
    }

    Ok(ForestModel {
        version: 1,
        boosting: cfg.boosting,
        base,
        learning_rate: if cfg.boosting { cfg.learning_rate } else { 1.0 },
        n_features: x.cols(),
        trees,
        raw_importance,
    })
}

fn bootstrap_size(n: usize, subsample: f64) -> usize {
    ((n as f64 * subsample).round() as usize).max(1)
}

fn subsample_rows(n: usize, frac: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if frac >= 1.0 {
        return (0..n).collect();
    }
    let take = bootstrap_size(n, frac);
    let mut rows: Vec<usize> = (0..n).collect();
    for i in 0..take {
        let j = rng.gen_range(i..n);
        rows.swap(i, j);
    }
    rows.truncate(take);
    rows.sort_unstable();
    rows
}

/// Pure prediction; bagged forests average their trees, boosted ensembles
/// add shrunken stage outputs to the base value.
pub fn predict_forest(model: &ForestModel, x: &Tensor) -> Result<Vec<f64>> {
    if x.rows() > 0 && x.cols() != model.n_features {
        return Err(Error::shape(
            "predict_forest",
            format!("{} columns vs {} at training", x.cols(), model.n_features),
        ));
    }
    if !x.all_finite() {
        return Err(Error::data("predict_forest: non-finite values in input"));
    }
    let n = x.rows();
    let mut out = vec![model.base; n];
    for tree in &model.trees {
        for (r, o) in out.iter_mut().enumerate() {
            *o += model.learning_rate * tree.predict_row(x.row(r));
        }
    }
    if !model.boosting {
        let n_trees = model.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= n_trees);
    }
    Ok(out)
}

/// Importance = total variance reduction per feature, normalized to sum to
/// 1, in descending order. Unused features report 0.
pub fn feature_importance(model: &ForestModel, names: &[String]) -> Result<Vec<(String, f64)>> {
    if names.len() != model.n_features {
        return Err(Error::data(format!(
            "feature_importance: {} names for {} features",
            names.len(),
            model.n_features
        )));
    }
    let total: f64 = model.raw_importance.iter().sum();
    let mut rows: Vec<(String, f64)> = names
        .iter()
        .zip(&model.raw_importance)
        .map(|(n, v)| (n.clone(), if total > 0.0 { v / total } else { 0.0 }))
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(rows)
}

/// Top-k feature names by importance; ties broken lexicographically.
pub fn select_top_k(importances: &[(String, f64)], k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::config("select_top_k: k must be positive"));
    }
    if k > importances.len() {
        return Err(Error::config(format!(
            "select_top_k: k = {k} exceeds {} features",
            importances.len()
        )));
    }
    let mut sorted = importances.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(sorted.into_iter().take(k).map(|(n, _)| n).collect())
}

impl ForestModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.version != 1 {
            return Err(Error::data(format!("unsupported forest format v{}", model.version)));
        }
        Ok(model)
    }
}
