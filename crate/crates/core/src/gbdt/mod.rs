//! Gradient-boosted regression trees, organized as per-cluster,
//! per-horizon-bucket submodels.
//!
//! The forecast horizon 1..=H is partitioned by the configured bucket edges
//! (default [1, 3, 9, 18, 36, 72, 288]); each bucket gets its own boosted
//! model trained on rows pooled over the horizons inside the bucket, with
//! the horizon offset itself as a feature.

mod model;
mod tree;

pub use model::{fit_tree, GbdtModel};
pub use tree::{RegressionTree, TreeNode, MIN_SPLIT_GAIN_REL};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::config::GbdtConfig;
use crate::ingest::{Dataset, STEPS_PER_DAY};
use crate::preprocess::{base_row_features, supervised_frame_subset, FeatureFrame, FeatureSpec};
use crate::{Error, Result};

const SCHEMA_VERSION: u32 = 1;

/// All boosted submodels of the farm: one [`GbdtModel`] per (cluster,
/// horizon bucket).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtEnsemble {
    pub schema_version: u32,
    /// Right edges of the horizon buckets; bucket i covers
    /// `(edge[i-1], edge[i]]` with an implicit left edge of 0.
    pub buckets: Vec<usize>,
    pub n_clusters: usize,
    /// `models[cluster][bucket]`.
    pub models: Vec<Vec<GbdtModel>>,
}

impl GbdtEnsemble {
    /// Max forecast horizon (the last bucket edge).
    pub fn horizon(&self) -> usize {
        *self.buckets.last().expect("buckets non-empty")
    }

    /// Bucket index covering horizon `h` (1-based steps ahead).
    pub fn bucket_index(&self, h: usize) -> usize {
        debug_assert!(h >= 1 && h <= self.horizon());
        self.buckets.partition_point(|&edge| edge < h)
    }

    /// Horizons of bucket `i`, ascending.
    pub fn bucket_horizons(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        let lo = if i == 0 { 1 } else { self.buckets[i - 1] + 1 };
        lo..=self.buckets[i]
    }

    /// Split gains summed over every submodel, descending.
    pub fn feature_importance(&self, top_k: usize) -> Vec<(String, f64)> {
        let mut total: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
        for per_cluster in &self.models {
            for model in per_cluster {
                for (name, gain) in model.feature_importance(usize::MAX) {
                    *total.entry(name).or_insert(0.0) += gain;
                }
            }
        }
        let mut ranked: Vec<(String, f64)> = total.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        ranked
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::save_json(self, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<GbdtEnsemble> {
        let model: GbdtEnsemble = crate::load_json(path.as_ref())?;
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

fn validate_buckets(buckets: &[usize]) -> Result<()> {
    if buckets.is_empty() || buckets[0] == 0 || buckets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam(
            "horizon buckets must be strictly increasing and positive".into(),
        ));
    }
    Ok(())
}

/// Split a supervised frame by the day its target falls on: rows whose
/// target day is within `train_days` go to the first frame, the rest to the
/// second. Splitting on the target day keeps training blind to any
/// measurement after the boundary.
pub(crate) fn split_by_target_day(
    frame: &FeatureFrame,
    train_days: usize,
) -> (FeatureFrame, FeatureFrame) {
    let mut train = FeatureFrame::new_raw(frame.columns.clone());
    let mut valid = FeatureFrame::new_raw(frame.columns.clone());
    for i in 0..frame.n_rows() {
        let target_step = frame.origin[i] as usize + frame.horizon[i] as usize;
        let target_day = target_step / STEPS_PER_DAY + 1;
        let dst = if target_day <= train_days { &mut train } else { &mut valid };
        dst.push_raw(
            frame.turbine[i],
            frame.origin[i],
            frame.horizon[i],
            frame.row(i),
            frame.target[i],
            frame.target_valid[i],
        );
    }
    (train, valid)
}

fn submodel_seed(base: u64, cluster: usize, bucket: usize) -> u64 {
    base.wrapping_add(((cluster as u64) << 20) | bucket as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train one boosted model per (cluster, bucket) on the imputed dataset.
/// Rows are assigned to train/validation by target day at `train_days`.
pub fn train_ensemble(
    ds: &Dataset,
    clusters: &ClusterModel,
    spec: &FeatureSpec,
    cfg: &GbdtConfig,
    train_days: usize,
) -> Result<GbdtEnsemble> {
    validate_buckets(&cfg.horizon_buckets)?;
    clusters.validate(ds.n_turbines())?;
    if train_days == 0 || train_days > ds.n_days() {
        return Err(Error::InvalidParam(format!(
            "train_days {train_days} outside 1..={}",
            ds.n_days()
        )));
    }

    let n_buckets = cfg.horizon_buckets.len();
    let jobs: Vec<(usize, usize)> = (0..clusters.k)
        .flat_map(|c| (0..n_buckets).map(move |b| (c, b)))
        .collect();

    let trained: Vec<Result<GbdtModel>> = jobs
        .par_iter()
        .map(|&(c, b)| {
            let members = clusters.members(c);
            let lo = if b == 0 { 1 } else { cfg.horizon_buckets[b - 1] + 1 };
            let hi = cfg.horizon_buckets[b];
            let horizons: Vec<usize> = (lo..=hi).step_by(cfg.horizon_stride).collect();
            let frame = supervised_frame_subset(
                ds,
                clusters,
                spec,
                &horizons,
                cfg.origin_stride,
                &members,
            )?;
            let (train, valid) = split_by_target_day(&frame, train_days);
            if train.n_rows() == 0 {
                return Err(Error::InvalidData(format!(
                    "no training rows for cluster {c} bucket {b} (horizons {lo}..={hi})"
                )));
            }
            let valid_opt = if valid.n_rows() > 0 { Some(&valid) } else { None };
            GbdtModel::train(&train, valid_opt, cfg, submodel_seed(cfg.seed, c, b))
        })
        .collect();

    let mut models: Vec<Vec<GbdtModel>> = vec![Vec::with_capacity(n_buckets); clusters.k];
    for ((c, _), result) in jobs.into_iter().zip(trained) {
        models[c].push(result?);
    }

    Ok(GbdtEnsemble {
        schema_version: SCHEMA_VERSION,
        buckets: cfg.horizon_buckets.clone(),
        n_clusters: clusters.k,
        models,
    })
}

/// Forecast every horizon 1..=H for one turbine with features computed at
/// `origin` (the last observed step). The origin must have full feature
/// history.
pub fn predict_at_origin(
    ensemble: &GbdtEnsemble,
    ds: &Dataset,
    clusters: &ClusterModel,
    spec: &FeatureSpec,
    turbine: usize,
    origin: usize,
) -> Result<Vec<f64>> {
    if clusters.k != ensemble.n_clusters {
        return Err(Error::ShapeMismatch(format!(
            "ensemble trained for {} clusters, assignment has {}",
            ensemble.n_clusters, clusters.k
        )));
    }
    let cluster = clusters.cluster_of(turbine);
    let base = base_row_features(ds, spec, cluster, turbine, origin);
    if base.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidData(format!(
            "origin {origin} lacks the {} steps of history needed by the feature set",
            spec.max_history()
        )));
    }
    let horizon = ensemble.horizon();
    let mut row = base;
    row.push(0.0); // horizon_offset, rewritten per step
    row.push(0.0); // target_time_of_day, rewritten per step
    let w = row.len();
    let mut out = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        row[w - 2] = h as f64;
        row[w - 1] = ((origin + h) % STEPS_PER_DAY) as f64;
        let model = &ensemble.models[cluster][ensemble.bucket_index(h)];
        out.push(model.predict_row(&row));
    }
    Ok(out)
}
