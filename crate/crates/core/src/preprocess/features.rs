//! Rolling-statistic and lag-difference features for the boosted-tree model.
//!
//! All rolling windows trail the forecast origin (the window ends at the
//! origin step), and lag differences reach strictly backwards, so no feature
//! ever reads data after its origin. Statistics are computed by direct
//! left-to-right summation over each trailing window; this is O(n * w) but
//! makes the values exactly reproducible by independent recomputation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::config::PreprocessConfig;
use crate::ingest::{Column, Dataset, STEPS_PER_DAY};
use crate::{Error, Result};

/// Which base columns, windows and lags to engineer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub windows: Vec<usize>,
    pub lags: Vec<usize>,
    pub columns: Vec<Column>,
}

impl FeatureSpec {
    pub fn from_config(cfg: &PreprocessConfig) -> FeatureSpec {
        FeatureSpec {
            windows: cfg.windows.clone(),
            lags: cfg.lags.clone(),
            columns: cfg.feature_columns.clone(),
        }
    }

    /// History steps needed before an origin has a complete feature row.
    pub fn max_history(&self) -> usize {
        let w = self.windows.iter().map(|&w| w - 1).max().unwrap_or(0);
        let l = self.lags.iter().copied().max().unwrap_or(0);
        w.max(l)
    }

    /// Names of the per-origin features, in row order.
    pub fn base_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.columns {
            names.push(col.name().to_string());
            for &w in &self.windows {
                for stat in ["mean", "max", "min", "std"] {
                    names.push(format!("{}_{stat}_{w}", col.name()));
                }
            }
            for &l in &self.lags {
                names.push(format!("{}_diff_{l}", col.name()));
            }
        }
        names.push("time_of_day".to_string());
        names.push("turbine_id".to_string());
        names.push("cluster_id".to_string());
        names
    }

    /// Base names plus the horizon decorations used by pooled training.
    pub fn supervised_names(&self) -> Vec<String> {
        let mut names = self.base_names();
        names.push("horizon_offset".to_string());
        names.push("target_time_of_day".to_string());
        names
    }

    fn validate_against(&self, n_steps: usize) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::InvalidParam("feature spec has no columns".into()));
        }
        if self.windows.iter().any(|&w| w == 0) || self.lags.iter().any(|&l| l == 0) {
            return Err(Error::InvalidParam("windows and lags must be >= 1".into()));
        }
        if self.max_history() >= n_steps {
            return Err(Error::InvalidParam(format!(
                "feature history ({} steps) exceeds series length ({n_steps})",
                self.max_history()
            )));
        }
        Ok(())
    }
}

/// Tabular feature rows with per-row identity and target bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub columns: Vec<String>,
    data: Vec<f64>,
    /// Turbine index per row.
    pub turbine: Vec<u32>,
    /// Forecast-origin step per row.
    pub origin: Vec<u32>,
    /// Steps ahead of the origin the target sits; 0 in per-origin frames.
    pub horizon: Vec<u32>,
    pub target: Vec<f64>,
    pub target_valid: Vec<bool>,
}

impl FeatureFrame {
    fn new(columns: Vec<String>) -> FeatureFrame {
        FeatureFrame {
            columns,
            data: Vec::new(),
            turbine: Vec::new(),
            origin: Vec::new(),
            horizon: Vec::new(),
            target: Vec::new(),
            target_valid: Vec::new(),
        }
    }

    /// Empty frame with the given columns, for callers assembling rows
    /// directly (tests, external tooling).
    pub fn new_raw(columns: Vec<String>) -> FeatureFrame {
        FeatureFrame::new(columns)
    }

    /// Append one row with its identity and target bookkeeping.
    pub fn push_raw(
        &mut self,
        turbine: u32,
        origin: u32,
        horizon: u32,
        row: &[f64],
        target: f64,
        target_valid: bool,
    ) {
        self.push_row(turbine, origin, horizon, row, target, target_valid);
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    /// A row is complete when no feature carries the not-available marker.
    pub fn is_complete(&self, i: usize) -> bool {
        self.row(i).iter().all(|v| !v.is_nan())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::ColumnMismatch(format!("frame has no column '{name}'")))
    }

    fn push_row(&mut self, turbine: u32, origin: u32, horizon: u32, row: &[f64], target: f64, target_valid: bool) {
        debug_assert_eq!(row.len(), self.n_cols());
        self.data.extend_from_slice(row);
        self.turbine.push(turbine);
        self.origin.push(origin);
        self.horizon.push(horizon);
        self.target.push(target);
        self.target_valid.push(target_valid);
    }

    fn append(&mut self, other: FeatureFrame) {
        debug_assert_eq!(self.columns, other.columns);
        self.data.extend(other.data);
        self.turbine.extend(other.turbine);
        self.origin.extend(other.origin);
        self.horizon.extend(other.horizon);
        self.target.extend(other.target);
        self.target_valid.extend(other.target_valid);
    }

    /// Export for inspection; not a model artifact.
    pub fn to_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header = vec!["turbine".to_string(), "origin".to_string(), "horizon".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("target".into());
        header.push("target_valid".into());
        let err = |e: csv::Error| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        };
        w.write_record(&header).map_err(err)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.turbine[i].to_string(),
                self.origin[i].to_string(),
                self.horizon[i].to_string(),
            ];
            for v in self.row(i) {
                rec.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            rec.push(self.target[i].to_string());
            rec.push(self.target_valid[i].to_string());
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// One turbine's base feature row at one origin. NaN marks features whose
/// trailing window or lag would reach before the series start.
pub(crate) fn base_row_features(
    ds: &Dataset,
    spec: &FeatureSpec,
    cluster_id: usize,
    turbine: usize,
    origin: usize,
) -> Vec<f64> {
    let mut row = Vec::new();
    for &col in &spec.columns {
        let series = ds.series(col, turbine);
        row.push(series[origin]);
        for &w in &spec.windows {
            if origin + 1 < w {
                row.extend_from_slice(&[f64::NAN; 4]);
                continue;
            }
            let window = &series[origin + 1 - w..=origin];
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            for &v in window {
                sum += v;
                max = max.max(v);
                min = min.min(v);
            }
            let mean = sum / w as f64;
            let std = if w > 1 {
                let mut ss = 0.0;
                for &v in window {
                    let d = v - mean;
                    ss += d * d;
                }
                (ss / (w - 1) as f64).sqrt()
            } else {
                0.0
            };
            row.extend_from_slice(&[mean, max, min, std]);
        }
        for &l in &spec.lags {
            row.push(if origin >= l {
                series[origin] - series[origin - l]
            } else {
                f64::NAN
            });
        }
    }
    row.push((origin % STEPS_PER_DAY) as f64);
    row.push(turbine as f64 + 1.0);
    row.push(cluster_id as f64);
    row
}

/// Per-origin feature frame: one row per (turbine, step), target = power at
/// the same step. Rows at the start of the series carry NaN markers where
/// features lack history.
pub fn engineer_features(
    ds: &Dataset,
    clusters: &ClusterModel,
    spec: &FeatureSpec,
) -> Result<FeatureFrame> {
    require_imputed(ds)?;
    clusters.validate(ds.n_turbines())?;
    spec.validate_against(ds.n_steps())?;
    let names = spec.base_names();
    let parts: Vec<FeatureFrame> = (0..ds.n_turbines())
        .into_par_iter()
        .map(|t| {
            let mut frame = FeatureFrame::new(names.clone());
            let cluster_id = clusters.cluster_of(t);
            let patv = ds.series(Column::Patv, t);
            let validity = ds.validity_series(t);
            for s in 0..ds.n_steps() {
                let row = base_row_features(ds, spec, cluster_id, t, s);
                frame.push_row(t as u32, s as u32, 0, &row, patv[s], validity[s].is_valid());
            }
            frame
        })
        .collect();
    let mut frame = FeatureFrame::new(names);
    for part in parts {
        frame.append(part);
    }
    Ok(frame)
}

/// Supervised training frame for horizon-pooled models: one row per
/// (turbine, origin, horizon) with complete features and an originally-VALID
/// target. Origins start at the first step with full history and advance by
/// `origin_stride`.
pub fn supervised_frame(
    ds: &Dataset,
    clusters: &ClusterModel,
    spec: &FeatureSpec,
    horizons: &[usize],
    origin_stride: usize,
) -> Result<FeatureFrame> {
    let all: Vec<usize> = (0..ds.n_turbines()).collect();
    supervised_frame_subset(ds, clusters, spec, horizons, origin_stride, &all)
}

/// [`supervised_frame`] restricted to a subset of turbines (per-cluster
/// training).
pub fn supervised_frame_subset(
    ds: &Dataset,
    clusters: &ClusterModel,
    spec: &FeatureSpec,
    horizons: &[usize],
    origin_stride: usize,
    turbines: &[usize],
) -> Result<FeatureFrame> {
    require_imputed(ds)?;
    clusters.validate(ds.n_turbines())?;
    spec.validate_against(ds.n_steps())?;
    if horizons.is_empty() || horizons.iter().any(|&h| h == 0) {
        return Err(Error::InvalidParam("horizons must be non-empty and >= 1".into()));
    }
    if origin_stride == 0 {
        return Err(Error::InvalidParam("origin_stride must be >= 1".into()));
    }
    let names = spec.supervised_names();
    let n_steps = ds.n_steps();
    let first_origin = spec.max_history();
    let parts: Vec<FeatureFrame> = turbines
        .par_iter()
        .map(|&t| {
            let mut frame = FeatureFrame::new(names.clone());
            let cluster_id = clusters.cluster_of(t);
            let patv = ds.series(Column::Patv, t);
            let validity = ds.validity_series(t);
            let mut origin = first_origin;
            while origin < n_steps {
                let mut base: Option<Vec<f64>> = None;
                for &h in horizons {
                    let target_step = origin + h;
                    if target_step >= n_steps || !validity[target_step].is_valid() {
                        continue;
                    }
                    let row = base.get_or_insert_with(|| base_row_features(ds, spec, cluster_id, t, origin));
                    if row.iter().any(|v| v.is_nan()) {
                        break;
                    }
                    let mut full = row.clone();
                    full.push(h as f64);
                    full.push((target_step % STEPS_PER_DAY) as f64);
                    frame.push_row(
                        t as u32,
                        origin as u32,
                        h as u32,
                        &full,
                        patv[target_step],
                        true,
                    );
                }
                origin += origin_stride;
            }
            frame
        })
        .collect();
    let mut frame = FeatureFrame::new(names);
    for part in parts {
        frame.append(part);
    }
    Ok(frame)
}

fn require_imputed(ds: &Dataset) -> Result<()> {
    if ds.is_imputed() {
        Ok(())
    } else {
        Err(Error::InvalidData(
            "feature engineering requires an imputed dataset".into(),
        ))
    }
}
