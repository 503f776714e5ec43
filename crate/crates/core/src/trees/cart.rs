//! CART regression tree with variance-reduction splits.
//!
//! Split candidates are the midpoints of sorted unique feature values, so a
//! brute-force exhaustive-split oracle can reproduce training exactly.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

pub struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Number of features considered per split; `None` means all.
    pub features_per_split: Option<usize>,
}

/// Grows a tree on the given rows. Feature subsets are drawn per split from
/// `rng` when `features_per_split` is set. Records each split's variance
/// reduction into `importance` (indexed by feature).
pub fn grow_tree(
    x: &Tensor,
    y: &[f64],
    rows: &[usize],
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    importance: &mut [f64],
) -> Tree {
    let mut tree = Tree::default();
    grow_node(x, y, rows.to_vec(), params, rng, importance, &mut tree, 0);
    tree
}

fn leaf_value(y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
}

fn sse(y: &[f64], rows: &[usize]) -> f64 {
    let mean = leaf_value(y, rows);
    rows.iter().map(|&r| (y[r] - mean) * (y[r] - mean)).sum()
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    x: &Tensor,
    y: &[f64],
    rows: Vec<usize>,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    importance: &mut [f64],
    tree: &mut Tree,
    depth: usize,
) -> usize {
    let node_idx = tree.nodes.len();
    tree.nodes.push(TreeNode::Leaf {
        value: leaf_value(y, &rows),
    });
    let depth_exhausted = params.max_depth.is_some_and(|d| depth >= d);
    if depth_exhausted || rows.len() < 2 * params.min_samples_leaf || rows.len() < 2 {
        return node_idx;
    }
    let parent_sse = sse(y, &rows);
    if parent_sse <= 0.0 {
        return node_idx;
    }

    let n_features = x.cols();
    let mut candidates: Vec<usize> = (0..n_features).collect();
    if let Some(m) = params.features_per_split {
        if m < n_features {
            candidates.shuffle(rng);
            candidates.truncate(m);
            candidates.sort_unstable();
        }
    }

    let mut best: Option<(f64, usize, f64)> = None; // (reduction, feature, threshold)
    for &feature in &candidates {
        let mut sorted: Vec<usize> = rows.clone();
        sorted.sort_by(|&a, &b| x.at(a, feature).partial_cmp(&x.at(b, feature)).unwrap());
        // prefix sums over the sorted order for O(1) split evaluation
        let n = sorted.len();
        let mut prefix_sum = 0.0;
        let mut prefix_sq = 0.0;
        let total_sum: f64 = sorted.iter().map(|&r| y[r]).sum();
        let total_sq: f64 = sorted.iter().map(|&r| y[r] * y[r]).sum();
        for i in 0..n - 1 {
            let r = sorted[i];
            prefix_sum += y[r];
            prefix_sq += y[r] * y[r];
            let v = x.at(r, feature);
            let v_next = x.at(sorted[i + 1], feature);
            if v == v_next {
                continue;
            }
            let n_left = (i + 1) as f64;
            let n_right = (n - i - 1) as f64;
            if (i + 1) < params.min_samples_leaf || (n - i - 1) < params.min_samples_leaf {
                continue;
            }
            let sse_left = prefix_sq - prefix_sum * prefix_sum / n_left;
            let right_sum = total_sum - prefix_sum;
            let sse_right = (total_sq - prefix_sq) - right_sum * right_sum / n_right;
            let reduction = parent_sse - sse_left - sse_right;
            let threshold = 0.5 * (v + v_next);
            let better = match &best {
                None => reduction > 0.0,
                Some((r0, _, _)) => reduction > *r0,
            };
            if better {
                best = Some((reduction, feature, threshold));
            }
        }
    }

    let Some((reduction, feature, threshold)) = best else {
        return node_idx;
    };
    importance[feature] += reduction;
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| x.at(r, feature) <= threshold);
    let left = grow_node(x, y, left_rows, params, rng, importance, tree, depth + 1);
    let right = grow_node(x, y, right_rows, params, rng, importance, tree, depth + 1);
    tree.nodes[node_idx] = TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    node_idx
}
