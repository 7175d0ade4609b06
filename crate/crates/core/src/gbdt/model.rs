//! Boosted regression-tree model: MSE boosting with row bagging, early
//! stopping on a validation frame, and truncation to the best iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GbdtConfig;
use crate::gbdt::tree::{fit_tree_on_rows, RegressionTree, TreeParams};
use crate::preprocess::FeatureFrame;
use crate::{Error, Result};

const SCHEMA_VERSION: u32 = 1;

/// Fit a single tree to `residuals` with bagging drawn from `seed`.
/// Exposed for oracle testing; training uses the same routine per round.
pub fn fit_tree(
    frame: &FeatureFrame,
    residuals: &[f64],
    cfg: &GbdtConfig,
    seed: u64,
) -> RegressionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = bag_rows(frame.n_rows(), cfg.bagging_fraction, &mut rng);
    let params = TreeParams {
        max_leaves: cfg.max_leaves,
        min_samples_leaf: cfg.min_samples_leaf,
    };
    fit_tree_on_rows(frame, residuals, rows, &params)
}

/// Sampled row indices, ascending. Fraction 1 keeps every row and draws
/// nothing from the rng.
fn bag_rows(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if fraction >= 1.0 {
        return (0..n as u32).collect();
    }
    let k = ((n as f64 * fraction).floor() as usize).max(1).min(n);
    let mut rows: Vec<u32> = rand::seq::index::sample(rng, n, k)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    rows.sort_unstable();
    rows
}

/// A trained boosted model: `prediction = base_score + lr * sum of trees`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    /// Trees retained after truncation to `best_iteration`.
    pub trees: Vec<RegressionTree>,
    pub best_iteration: usize,
    /// Training MSE after each completed round (before truncation).
    pub train_history: Vec<f64>,
    /// Validation MSE after each completed round, when a validation frame
    /// was supplied.
    pub valid_history: Vec<f64>,
}

fn mse(truth: &[f64], pred: &[f64]) -> f64 {
    debug_assert_eq!(truth.len(), pred.len());
    let mut sum = 0.0;
    for i in 0..truth.len() {
        let d = truth[i] - pred[i];
        sum += d * d;
    }
    sum / truth.len() as f64
}

impl GbdtModel {
    /// Boosted training. Each round fits a tree to the current residuals on
    /// a bagged row subset, then updates predictions everywhere with the
    /// learning rate. Stops at `max_rounds`, or earlier when validation MSE
    /// has not improved for `early_stopping_rounds` consecutive rounds; the
    /// tree list is truncated to the best validation round.
    pub fn train(
        train: &FeatureFrame,
        valid: Option<&FeatureFrame>,
        cfg: &GbdtConfig,
        seed: u64,
    ) -> Result<GbdtModel> {
        if train.n_rows() == 0 {
            return Err(Error::InvalidData("empty training frame".into()));
        }
        if let Some(v) = valid {
            if v.columns != train.columns {
                return Err(Error::ColumnMismatch(
                    "train and validation frames have different columns".into(),
                ));
            }
        }
        let early_stop = cfg.early_stopping_rounds > 0;
        let valid_rows = valid.map_or(0, |v| v.n_rows());
        if early_stop && valid_rows == 0 {
            return Err(Error::InvalidParam(
                "early stopping requires a non-empty validation frame".into(),
            ));
        }

        let n = train.n_rows();
        let base_score = train.target.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base_score; n];
        let mut valid_pred = vec![base_score; valid_rows];
        let mut residuals = vec![0.0; n];
        let mut trees: Vec<RegressionTree> = Vec::new();
        let mut train_history = Vec::new();
        let mut valid_history = Vec::new();
        let mut best_iteration = 0usize;
        let mut best_mse = f64::INFINITY;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = TreeParams {
            max_leaves: cfg.max_leaves,
            min_samples_leaf: cfg.min_samples_leaf,
        };

        for round in 0..cfg.max_rounds {
            for i in 0..n {
                residuals[i] = train.target[i] - pred[i];
            }
            let rows = bag_rows(n, cfg.bagging_fraction, &mut rng);
            let tree = fit_tree_on_rows(train, &residuals, rows, &params);

            let updates: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| tree.predict_row(train.row(i)))
                .collect();
            for i in 0..n {
                pred[i] += cfg.learning_rate * updates[i];
            }
            train_history.push(mse(&train.target, &pred));

            if let Some(v) = valid {
                let updates: Vec<f64> = (0..valid_rows)
                    .into_par_iter()
                    .map(|i| tree.predict_row(v.row(i)))
                    .collect();
                for i in 0..valid_rows {
                    valid_pred[i] += cfg.learning_rate * updates[i];
                }
                let vm = mse(&v.target, &valid_pred);
                valid_history.push(vm);
                if vm < best_mse {
                    best_mse = vm;
                    best_iteration = round + 1;
                }
            }
            trees.push(tree);

            if early_stop && (round + 1) - best_iteration >= cfg.early_stopping_rounds {
                break;
            }
        }

        if valid.is_none() {
            best_iteration = trees.len();
        }
        trees.truncate(best_iteration);

        Ok(GbdtModel {
            schema_version: SCHEMA_VERSION,
            feature_names: train.columns.clone(),
            base_score,
            learning_rate: cfg.learning_rate,
            trees,
            best_iteration,
            train_history,
            valid_history,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.feature_names.len());
        let mut y = self.base_score;
        for tree in &self.trees[..self.best_iteration] {
            y += self.learning_rate * tree.predict_row(row);
        }
        y
    }

    pub fn predict(&self, frame: &FeatureFrame) -> Result<Vec<f64>> {
        if frame.columns != self.feature_names {
            return Err(Error::ColumnMismatch(format!(
                "model expects columns {:?}",
                self.feature_names
            )));
        }
        Ok((0..frame.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row(frame.row(i)))
            .collect())
    }

    /// Total split gain per feature over the retained trees, descending;
    /// ties break by feature name. Zero-gain features are omitted.
    pub fn feature_importance(&self, top_k: usize) -> Vec<(String, f64)> {
        let mut acc = vec![0.0; self.feature_names.len()];
        for tree in &self.trees[..self.best_iteration] {
            tree.accumulate_gain(&mut acc);
        }
        let mut ranked: Vec<(String, f64)> = acc
            .into_iter()
            .enumerate()
            .filter(|(_, g)| *g > 0.0)
            .map(|(i, g)| (self.feature_names[i].clone(), g))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        ranked
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::save_json(self, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<GbdtModel> {
        let model: GbdtModel = crate::load_json(path.as_ref())?;
        if model.schema_version > SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.as_ref().display().to_string(),
                found: model.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: &[Vec<f64>], targets: &[f64]) -> FeatureFrame {
        let columns: Vec<String> = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
        let mut frame = FeatureFrame::new_raw(columns);
        for (i, row) in rows.iter().enumerate() {
            frame.push_raw(i as u32, 0, 0, row, targets[i], true);
        }
        frame
    }

    fn no_bag_cfg() -> GbdtConfig {
        GbdtConfig {
            learning_rate: 1.0,
            max_leaves: 4,
            min_samples_leaf: 1,
            bagging_fraction: 1.0,
            max_rounds: 5,
            early_stopping_rounds: 0,
            ..GbdtConfig::default()
        }
    }

    #[test]
    fn zero_rounds_predicts_the_mean() {
        let f = frame(&[vec![0.0], vec![1.0], vec![2.0]], &[1.0, 2.0, 6.0]);
        let mut cfg = no_bag_cfg();
        cfg.max_rounds = 0;
        let model = GbdtModel::train(&f, None, &cfg, 0).unwrap();
        assert_eq!(model.base_score, 3.0);
        assert_eq!(model.best_iteration, 0);
        let preds = model.predict(&f).unwrap();
        assert_eq!(preds, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn separable_two_points_fit_in_one_round() {
        let f = frame(&[vec![0.0], vec![1.0]], &[0.0, 1.0]);
        let mut cfg = no_bag_cfg();
        cfg.max_rounds = 1;
        let model = GbdtModel::train(&f, None, &cfg, 0).unwrap();
        assert_eq!(model.base_score, 0.5);
        assert_eq!(model.predict_row(&[0.0]), 0.0);
        assert_eq!(model.predict_row(&[1.0]), 1.0);
        assert_eq!(model.train_history.last().copied(), Some(0.0));
    }

    #[test]
    fn train_mse_is_non_increasing_without_bagging() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), i as f64])
            .collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| 3.0 * r[0] - 2.0 * r[1] + (r[2] * 0.91).sin())
            .collect();
        let f = frame(&rows, &targets);
        let mut cfg = no_bag_cfg();
        cfg.learning_rate = 0.3;
        cfg.max_rounds = 50;
        let model = GbdtModel::train(&f, None, &cfg, 0).unwrap();
        for w in model.train_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "train MSE rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        // Validation targets diverge from training targets, so overfitting
        // shows up quickly and early stopping kicks in.
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let train_targets: Vec<f64> = (0..40).map(|i| ((i * 7919) % 13) as f64).collect();
        let valid_rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 + 0.5]).collect();
        let valid_targets: Vec<f64> = (0..20).map(|i| ((i * 104729) % 7) as f64).collect();
        let tf = frame(&rows, &train_targets);
        let vf = frame(&valid_rows, &valid_targets);
        let mut cfg = no_bag_cfg();
        cfg.learning_rate = 0.5;
        cfg.max_leaves = 16;
        cfg.max_rounds = 200;
        cfg.early_stopping_rounds = 5;
        let model = GbdtModel::train(&tf, Some(&vf), &cfg, 0).unwrap();
        assert!(model.valid_history.len() < 200, "early stopping never fired");
        assert_eq!(model.trees.len(), model.best_iteration);
        let best = model.valid_history[model.best_iteration - 1];
        for &v in &model.valid_history {
            assert!(best <= v);
        }
    }

    #[test]
    fn early_stopping_requires_validation_rows() {
        let f = frame(&[vec![0.0], vec![1.0]], &[0.0, 1.0]);
        let mut cfg = no_bag_cfg();
        cfg.early_stopping_rounds = 10;
        match GbdtModel::train(&f, None, &cfg, 0) {
            Err(Error::InvalidParam(_)) => {}
            other => panic!("expected invalid param, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_serialization_across_runs() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()])
            .collect();
        let targets: Vec<f64> = (0..50).map(|i| (i as f64 * 0.17).sin() * 4.0).collect();
        let f = frame(&rows, &targets);
        let mut cfg = no_bag_cfg();
        cfg.bagging_fraction = 0.8;
        cfg.max_rounds = 10;
        let a = GbdtModel::train(&f, None, &cfg, 42).unwrap();
        let b = GbdtModel::train(&f, None, &cfg, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = GbdtModel::train(&f, None, &cfg, 43).unwrap();
        assert_eq!(c.trees.len(), 10);
    }

    #[test]
    fn model_roundtrips_through_disk() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1]).collect();
        let targets: Vec<f64> = (0..30).map(|i| (i as f64 * 0.4).sin()).collect();
        let f = frame(&rows, &targets);
        let model = GbdtModel::train(&f, None, &no_bag_cfg(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = GbdtModel::load(&path).unwrap();
        assert_eq!(model, back);
        let p1 = model.predict(&f).unwrap();
        let p2 = back.predict(&f).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn importance_concentrates_on_the_informative_feature() {
        // Targets depend only on feature 1 among three.
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                vec![
                    ((i * 31) % 64) as f64,
                    (i % 8) as f64,
                    ((i * 17) % 64) as f64,
                ]
            })
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| if r[1] < 4.0 { 0.0 } else { 10.0 }).collect();
        let f = frame(&rows, &targets);
        let mut cfg = no_bag_cfg();
        cfg.max_rounds = 3;
        let model = GbdtModel::train(&f, None, &cfg, 0).unwrap();
        let imp = model.feature_importance(10);
        assert_eq!(imp[0].0, "f1");

        let mut cfg0 = no_bag_cfg();
        cfg0.max_rounds = 0;
        let empty = GbdtModel::train(&f, None, &cfg0, 0).unwrap();
        assert!(empty.feature_importance(10).is_empty());
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let f = frame(&[vec![0.0], vec![1.0]], &[0.0, 1.0]);
        let model = GbdtModel::train(&f, None, &no_bag_cfg(), 0).unwrap();
        let mut other = FeatureFrame::new_raw(vec!["weird".into()]);
        other.push_raw(0, 0, 0, &[1.0], 0.0, true);
        assert!(matches!(model.predict(&other), Err(Error::ColumnMismatch(_))));
    }
}
