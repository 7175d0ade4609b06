//! Single regression tree: exact greedy split search with best-first leaf
//! expansion.
//!
//! Splits are found by scanning every feature's sorted values and evaluating
//! the SSE-reduction gain at each midpoint between adjacent distinct values.
//! Everything is deterministic: rows are processed in a canonical order, and
//! ties in gain break toward the earlier-created leaf, then the smaller
//! (feature, threshold) pair.

use serde::{Deserialize, Serialize};

use crate::preprocess::FeatureFrame;

/// Minimum admissible split gain, relative to max(1, leaf sum of squared
/// residuals). Guards against splits whose "gain" is pure floating-point
/// noise (e.g. constant residuals summed in different orders).
pub const MIN_SPLIT_GAIN_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted regression tree. Node 0 is the root; rows route left when
/// `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Accumulate each split's gain into `acc` by feature index.
    pub(crate) fn accumulate_gain(&self, acc: &mut [f64]) {
        for node in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = node {
                acc[*feature] += *gain;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Rows of the leaf sorted by (feature value, row), split position.
    sorted: Vec<u32>,
    split_at: usize,
}

/// Best admissible split of a leaf, or None. `rows` are indices into the
/// frame's rows (the bagged subset owned by this leaf).
fn best_split(frame: &FeatureFrame, residuals: &[f64], rows: &[u32], params: &TreeParams) -> Option<BestSplit> {
    let n = rows.len();
    if n < 2 * params.min_samples_leaf {
        return None;
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &r in rows {
        let v = residuals[r as usize];
        sum += v;
        sum_sq += v * v;
    }
    let base = sum * sum / n as f64;
    let min_gain = MIN_SPLIT_GAIN_REL * sum_sq.max(1.0);

    let n_features = frame.n_cols();
    let candidates: Vec<Option<BestSplit>> = (0..n_features)
        .map(|f| {
            let mut sorted: Vec<u32> = rows.to_vec();
            sorted.sort_by(|&a, &b| {
                let va = frame.row(a as usize)[f];
                let vb = frame.row(b as usize)[f];
                va.total_cmp(&vb).then(a.cmp(&b))
            });
            let mut best: Option<(f64, f64, usize)> = None; // (gain, threshold, split_at)
            let mut left_sum = 0.0;
            for i in 1..n {
                left_sum += residuals[sorted[i - 1] as usize];
                let a = frame.row(sorted[i - 1] as usize)[f];
                let b = frame.row(sorted[i] as usize)[f];
                if a >= b {
                    continue;
                }
                let n_left = i;
                let n_right = n - i;
                if n_left < params.min_samples_leaf || n_right < params.min_samples_leaf {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - base;
                if gain <= min_gain {
                    continue;
                }
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    // Midpoint rounded up onto the right value; fall back so
                    // the partition rule (<= goes left) stays exact.
                    threshold = a;
                }
                let better = match best {
                    None => true,
                    Some((bg, bt, _)) => gain > bg || (gain == bg && threshold < bt),
                };
                if better {
                    best = Some((gain, threshold, i));
                }
            }
            best.map(|(gain, threshold, split_at)| BestSplit {
                feature: f,
                threshold,
                gain,
                sorted,
                split_at,
            })
        })
        .collect();

    candidates.into_iter().flatten().fold(None, |acc, c| match acc {
        None => Some(c),
        Some(a) => {
            let better = c.gain > a.gain
                || (c.gain == a.gain
                    && (c.feature, c.threshold) < (a.feature, a.threshold));
            Some(if better { c } else { a })
        }
    })
}

/// Mean residual over rows, summed in ascending row order.
fn leaf_value(residuals: &[f64], rows: &[u32]) -> f64 {
    debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
    let mut sum = 0.0;
    for &r in rows {
        sum += residuals[r as usize];
    }
    sum / rows.len() as f64
}

/// Fit one tree to the residuals of the given rows by greedy best-first leaf
/// expansion: the open leaf with the largest admissible gain splits first,
/// until `max_leaves` is reached or no admissible split remains.
pub(crate) fn fit_tree_on_rows(
    frame: &FeatureFrame,
    residuals: &[f64],
    rows: Vec<u32>,
    params: &TreeParams,
) -> RegressionTree {
    assert!(!rows.is_empty(), "tree needs at least one row");
    assert!(params.max_leaves >= 1);

    let mut nodes = vec![TreeNode::Leaf {
        value: leaf_value(residuals, &rows),
    }];
    if params.max_leaves == 1 {
        return RegressionTree { nodes };
    }

    // Open leaves awaiting possible expansion: (node index, rows, cached
    // best split). Expansion picks the largest gain; ties break toward the
    // earlier-created leaf (stable scan order below).
    let mut open: Vec<(usize, Vec<u32>, Option<BestSplit>)> = Vec::new();
    let split = best_split(frame, residuals, &rows, params);
    open.push((0, rows, split));
    let mut n_leaves = 1;

    while n_leaves < params.max_leaves {
        let mut pick: Option<usize> = None;
        for (i, (_, _, split)) in open.iter().enumerate() {
            if let Some(s) = split {
                let better = match pick {
                    None => true,
                    Some(p) => {
                        let pg = open[p].2.as_ref().expect("picked leaf has split").gain;
                        s.gain > pg
                    }
                };
                if better {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let (node_idx, rows, split) = open.swap_remove(pick);
        let split = split.expect("picked leaf has split");

        let mut left_rows: Vec<u32> = split.sorted[..split.split_at].to_vec();
        let mut right_rows: Vec<u32> = split.sorted[split.split_at..].to_vec();
        left_rows.sort_unstable();
        right_rows.sort_unstable();

        let left_idx = nodes.len();
        let right_idx = nodes.len() + 1;
        nodes.push(TreeNode::Leaf {
            value: leaf_value(residuals, &left_rows),
        });
        nodes.push(TreeNode::Leaf {
            value: leaf_value(residuals, &right_rows),
        });
        nodes[node_idx] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_idx,
            right: right_idx,
            gain: split.gain,
        };
        n_leaves += 1;

        let left_split = best_split(frame, residuals, &left_rows, params);
        let right_split = best_split(frame, residuals, &right_rows, params);
        open.push((left_idx, left_rows, left_split));
        open.push((right_idx, right_rows, right_split));
    }

    RegressionTree { nodes }
}
