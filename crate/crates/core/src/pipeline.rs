//! Stage orchestration over versioned on-disk artifacts. Each stage reads
//! the previous stage's outputs, logs the config hash for provenance, and
//! writes bit-stable artifacts (timings go to the log, never into files).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_correlation, cluster_spatial_iter, ClusterMethod, ClusterModel};
use crate::config::PipelineConfig;
use crate::eval::{
    compute_metrics, error_curve, persistence_forecast, reconstruct_test, window_errors,
    EvalReport, EvalWindow,
};
use crate::gbdt::{predict_at_origin, train_ensemble, GbdtEnsemble};
use crate::gru::{predict_long, predict_stitched, train_all_clusters, GruModelSet};
use crate::ingest::{
    flag_abnormal, parse_layout_csv, parse_turbine_csv, read_canonical_csv, write_canonical_csv,
    Column, Dataset, FlagSummary, STEPS_PER_DAY,
};
use crate::postprocess::{apply_alpha, clip, ensemble_mean, fit_alpha, smooth, Forecast};
use crate::preprocess::{extract_window, impute, FeatureSpec};
use crate::synth::{generate, write_farm_csv, write_layout_csv, SyntheticFarmSpec};
use crate::{Error, Result};

const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Artifact locations under the configured artifacts directory.
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &PipelineConfig) -> Artifacts {
        Artifacts { root: PathBuf::from(&cfg.paths.artifacts) }
    }

    pub fn ensure_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root)
            .map_err(|e| Error::io(self.root.display().to_string(), e))
    }

    pub fn canonical_csv(&self) -> PathBuf {
        self.root.join("canonical.csv")
    }

    pub fn ingest_summary(&self) -> PathBuf {
        self.root.join("ingest.json")
    }

    pub fn clusters_gru(&self) -> PathBuf {
        self.root.join("clusters_gru.json")
    }

    pub fn clusters_gbdt(&self) -> PathBuf {
        self.root.join("clusters_gbdt.json")
    }

    pub fn imputed_csv(&self) -> PathBuf {
        self.root.join("imputed.csv")
    }

    pub fn preprocess_summary(&self) -> PathBuf {
        self.root.join("preprocess.json")
    }

    pub fn gbdt_model(&self) -> PathBuf {
        self.root.join("gbdt.json")
    }

    pub fn gru_model(&self) -> PathBuf {
        self.root.join("gru.json")
    }

    pub fn injection_log(&self) -> PathBuf {
        self.root.join("injections.json")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }

    pub fn eval_breakdown(&self) -> PathBuf {
        self.root.join("eval_breakdown.csv")
    }

    pub fn eval_curve(&self) -> PathBuf {
        self.root.join("eval_curve.csv")
    }

    /// The artifact must exist; the error names the command that creates it.
    fn require(&self, path: PathBuf, produced_by: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact {
                path: path.display().to_string(),
                produced_by: produced_by.to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub n_turbines: usize,
    pub n_days: usize,
    pub valid: usize,
    pub abnormal: usize,
    pub missing: usize,
    pub flags: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub imputed: bool,
}

/// Parse raw data, apply abnormal flagging, and persist the canonical grid.
pub fn stage_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let started = Instant::now();
    log::info!("ingest: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    arts.ensure_dir()?;
    let ds = parse_turbine_csv(&cfg.paths.data, &cfg.preprocess.schema)?;
    let layout = parse_layout_csv(&cfg.paths.layout)?;
    if layout.len() != ds.n_turbines() {
        return Err(Error::InvalidData(format!(
            "layout lists {} turbines, data has {}",
            layout.len(),
            ds.n_turbines()
        )));
    }
    let (flagged, rule_counts) = flag_abnormal(ds, &cfg.preprocess.abnormal);
    let (valid, abnormal, missing) = flagged.counts();
    write_canonical_csv(&flagged, arts.canonical_csv())?;
    let summary = IngestSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        n_turbines: flagged.n_turbines(),
        n_days: flagged.n_days(),
        valid,
        abnormal,
        missing,
        flags: flag_map(&rule_counts),
    };
    crate::save_json(&summary, arts.ingest_summary())?;
    log::info!(
        "ingest: {} records ({valid} valid, {abnormal} abnormal, {missing} missing) in {:.2?}",
        flagged.total_records(),
        started.elapsed()
    );
    Ok(summary)
}

fn flag_map(summary: &FlagSummary) -> BTreeMap<String, usize> {
    summary
        .counts()
        .into_iter()
        .map(|(rule, n)| (rule.name().to_string(), n))
        .collect()
}

/// Build both cluster assignments (fine for the recurrent models, coarse
/// for the boosted trees) from the configured method.
pub fn stage_cluster(cfg: &PipelineConfig) -> Result<(ClusterModel, ClusterModel)> {
    let started = Instant::now();
    log::info!("cluster: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    let canonical = arts.require(arts.canonical_csv(), "windcast ingest")?;
    let ds = read_canonical_csv(canonical)?;
    let build = |k: usize| -> Result<ClusterModel> {
        match cfg.clustering.method {
            ClusterMethod::SpatialKmeans => {
                let layout = parse_layout_csv(&cfg.paths.layout)?;
                cluster_spatial_iter(&layout, k, cfg.clustering.seed, cfg.clustering.kmeans_max_iter)
            }
            ClusterMethod::CorrelationAgglomerative => cluster_correlation(&ds, k),
        }
    };
    let gru = build(cfg.clustering.k_gru.min(ds.n_turbines()))?;
    let gbdt = build(cfg.clustering.k_gbdt.min(ds.n_turbines()))?;
    gru.save(arts.clusters_gru())?;
    gbdt.save(arts.clusters_gbdt())?;
    log::info!(
        "cluster: k_gru={} k_gbdt={} in {:.2?}",
        gru.k,
        gbdt.k,
        started.elapsed()
    );
    Ok((gru, gbdt))
}

/// Two-step imputation over the fine clusters; writes the imputed grid.
pub fn stage_preprocess(cfg: &PipelineConfig) -> Result<()> {
    let started = Instant::now();
    log::info!("preprocess: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    let canonical = arts.require(arts.canonical_csv(), "windcast ingest")?;
    let ds = read_canonical_csv(canonical)?;
    let clusters_path = arts.require(arts.clusters_gru(), "windcast cluster")?;
    let clusters = ClusterModel::load(clusters_path)?;
    let imputed = impute(&ds, &clusters)?;
    write_canonical_csv(&imputed, arts.imputed_csv())?;
    let summary = PreprocessSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        imputed: true,
    };
    crate::save_json(&summary, arts.preprocess_summary())?;
    log::info!("preprocess: imputed {} records in {:.2?}", imputed.total_records(), started.elapsed());
    Ok(())
}

fn load_imputed(cfg: &PipelineConfig, arts: &Artifacts) -> Result<Dataset> {
    let path = arts.require(arts.imputed_csv(), "windcast preprocess")?;
    let mut ds = read_canonical_csv(path)?;
    ds.mark_imputed();
    Ok(ds)
}

pub fn stage_train_gbdt(cfg: &PipelineConfig) -> Result<GbdtEnsemble> {
    let started = Instant::now();
    log::info!("train-gbdt: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    let ds = load_imputed(cfg, &arts)?;
    let clusters = ClusterModel::load(arts.require(arts.clusters_gbdt(), "windcast cluster")?)?;
    let spec = FeatureSpec::from_config(&cfg.preprocess);
    let ensemble = train_ensemble(&ds, &clusters, &spec, &cfg.gbdt, cfg.split.train_days)?;
    ensemble.save(arts.gbdt_model())?;
    log::info!("train-gbdt: {} submodels in {:.2?}", clusters.k * cfg.gbdt.horizon_buckets.len(), started.elapsed());
    Ok(ensemble)
}

pub fn stage_train_gru(cfg: &PipelineConfig) -> Result<GruModelSet> {
    let started = Instant::now();
    log::info!("train-gru: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    let ds = load_imputed(cfg, &arts)?;
    let clusters = ClusterModel::load(arts.require(arts.clusters_gru(), "windcast cluster")?)?;
    let set = train_all_clusters(&ds, &clusters, &cfg.gru, cfg.split.train_days)?;
    set.save(arts.gru_model())?;
    log::info!("train-gru: {} cluster models in {:.2?}", set.n_clusters(), started.elapsed());
    Ok(set)
}

/// Everything needed to produce forecasts.
pub struct Models {
    pub gbdt: GbdtEnsemble,
    pub gbdt_clusters: ClusterModel,
    pub gru: GruModelSet,
    pub gru_clusters: ClusterModel,
    pub feature_spec: FeatureSpec,
}

pub fn load_models(cfg: &PipelineConfig, arts: &Artifacts) -> Result<Models> {
    let gbdt = GbdtEnsemble::load(arts.require(arts.gbdt_model(), "windcast train-gbdt")?)?;
    let gru = GruModelSet::load(arts.require(arts.gru_model(), "windcast train-gru")?)?;
    let gbdt_clusters = ClusterModel::load(arts.require(arts.clusters_gbdt(), "windcast cluster")?)?;
    let gru_clusters = ClusterModel::load(arts.require(arts.clusters_gru(), "windcast cluster")?)?;
    Ok(Models {
        gbdt,
        gbdt_clusters,
        gru,
        gru_clusters,
        feature_spec: FeatureSpec::from_config(&cfg.preprocess),
    })
}

/// Raw per-model forecasts for one turbine with the first predicted step at
/// `first_step`.
fn forecast_parts(
    models: &Models,
    ds: &Dataset,
    cfg: &PipelineConfig,
    turbine: usize,
    first_step: usize,
) -> Result<(Forecast, Forecast)> {
    let gbdt_values = predict_at_origin(
        &models.gbdt,
        ds,
        &models.gbdt_clusters,
        &models.feature_spec,
        turbine,
        first_step - 1,
    )?;
    let gbdt_fc = Forecast::new(turbine as u32 + 1, first_step, gbdt_values, "gbdt");

    let cluster = models.gru_clusters.cluster_of(turbine);
    let net = &models.gru.networks[cluster];
    let scaler = &models.gru.scalers[cluster];
    let long_len = cfg.gru.pretrain_input_len;
    if first_step < long_len {
        return Err(Error::InvalidData(format!(
            "forecast origin {first_step} has less than {long_len} steps of history"
        )));
    }
    let long_w = extract_window(ds, turbine, first_step - long_len, long_len, 0);
    let gru_values = if net.short_head_trained {
        let short_len = cfg.gru.finetune_len;
        let short_w = extract_window(ds, turbine, first_step - short_len, short_len, 0);
        predict_stitched(net, scaler, &long_w, &short_w)?
    } else {
        predict_long(net, scaler, &long_w)?
    };
    let gru_fc = Forecast::new(turbine as u32 + 1, first_step, gru_values, "gru");
    Ok((gbdt_fc, gru_fc))
}

/// Fixed post-processing chain: ensemble -> smooth -> alpha -> clip.
fn postprocess_chain(
    parts: &[Forecast],
    alpha: Option<f64>,
    clip_hi: f64,
    cfg: &PipelineConfig,
) -> Result<Forecast> {
    let mut fc = ensemble_mean(parts)?;
    fc = smooth(&fc, cfg.postprocess.smooth_window)?;
    if let Some(a) = alpha {
        fc = apply_alpha(&fc, a)?;
    }
    clip(&fc, cfg.postprocess.clip_min, clip_hi)
}

/// Upper clip bound: configured value, or the farm-wide maximum VALID power
/// over the training days.
fn clip_bound(cfg: &PipelineConfig, ds: &Dataset) -> Result<f64> {
    if let Some(hi) = cfg.postprocess.clip_max {
        return Ok(hi);
    }
    let train = ds.slice_days(1, cfg.split.train_days.min(ds.n_days()))?;
    train.max_valid_patv().ok_or_else(|| {
        Error::InvalidData("no VALID training power to derive a clip bound from".into())
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastMeta {
    pub schema_version: u32,
    pub config_hash: String,
    /// First predicted step index in the source series.
    pub origin_step: usize,
    pub horizon: usize,
    pub models: Vec<String>,
    pub alpha: Option<f64>,
    pub smooth_window: usize,
    pub clip: (f64, f64),
}

/// Forecast every turbine from `origin` (default: just past the end of the
/// series) and write the forecast CSV plus its provenance sidecar.
pub fn stage_predict(cfg: &PipelineConfig, origin: Option<usize>) -> Result<PathBuf> {
    let started = Instant::now();
    log::info!("predict: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    let ds = load_imputed(cfg, &arts)?;
    let models = load_models(cfg, &arts)?;
    let first_step = origin.unwrap_or(ds.n_steps());
    let clip_hi = clip_bound(cfg, &ds)?;
    let alpha = cfg.postprocess.alpha;

    let out_dir = PathBuf::from(&cfg.paths.output);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let csv_path = out_dir.join("forecast.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Csv {
        file: csv_path.display().to_string(),
        message: e.to_string(),
    })?;
    w.write_record(["turbine_id", "step", "value_kw"]).map_err(|e| Error::Csv {
        file: csv_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut provenance = None;
    for t in 0..ds.n_turbines() {
        let (gbdt_fc, gru_fc) = forecast_parts(&models, &ds, cfg, t, first_step)?;
        let fc = postprocess_chain(&[gbdt_fc, gru_fc], alpha, clip_hi, cfg)?;
        for (i, v) in fc.values.iter().enumerate() {
            w.write_record([(t + 1).to_string(), (i + 1).to_string(), v.to_string()])
                .map_err(|e| Error::Csv {
                    file: csv_path.display().to_string(),
                    message: e.to_string(),
                })?;
        }
        provenance.get_or_insert(fc.provenance);
    }
    w.flush().map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let provenance = provenance
        .ok_or_else(|| Error::InvalidData("no turbines to forecast".into()))?;
    let meta = ForecastMeta {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        origin_step: first_step,
        horizon: models.gbdt.horizon(),
        models: provenance.models,
        alpha: provenance.alpha,
        smooth_window: cfg.postprocess.smooth_window,
        clip: (cfg.postprocess.clip_min, clip_hi),
    };
    crate::save_json(&meta, out_dir.join("forecast_meta.json"))?;
    log::info!("predict: {} turbines from step {first_step} in {:.2?}", ds.n_turbines(), started.elapsed());
    Ok(csv_path)
}

/// Cached raw forecasts for one (origin, turbine) evaluation unit.
struct RawUnit {
    turbine: usize,
    /// Absolute first predicted step.
    first_step: usize,
    gbdt: Forecast,
    gru: Forecast,
    truth: Vec<f64>,
    mask: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub schema_version: u32,
    pub config_hash: String,
    /// Per-model reports, keyed by model tag.
    pub reports: BTreeMap<String, EvalReport>,
    /// Alpha actually applied to post-processed forecasts.
    pub alpha: Option<f64>,
    /// Absolute evaluation origins (first predicted step per window).
    pub origins: Vec<usize>,
    /// Alpha ablation: (alpha, ensemble report) rows.
    pub sweep: Vec<(f64, EvalReport)>,
}

/// Evaluate trained models on the held-out days with rolling windows.
pub fn stage_evaluate(cfg: &PipelineConfig, sweep: &[f64]) -> Result<Evaluation> {
    let started = Instant::now();
    log::info!("evaluate: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    let ds = load_imputed(cfg, &arts)?;
    let models = load_models(cfg, &arts)?;
    let horizon = cfg.eval.horizon;
    let history = cfg.eval.history_len;
    let train_end = cfg.split.train_days * STEPS_PER_DAY as usize;
    if train_end >= ds.n_steps() {
        return Err(Error::InvalidData(format!(
            "no held-out data: {} train days cover the whole series",
            cfg.split.train_days
        )));
    }
    let test_len = ds.n_steps() - train_end;
    let rel_origins =
        reconstruct_test(test_len, cfg.eval.n_windows, history, horizon, cfg.eval.seed)?;
    let clip_hi = clip_bound(cfg, &ds)?;

    let mut units = Vec::new();
    for &rel in &rel_origins {
        let first_step = train_end + rel + history;
        for t in 0..ds.n_turbines() {
            let (gbdt_fc, gru_fc) = forecast_parts(&models, &ds, cfg, t, first_step)?;
            let patv = ds.series(Column::Patv, t);
            let validity = ds.validity_series(t);
            let truth = patv[first_step..first_step + horizon].to_vec();
            let mask: Vec<bool> = validity[first_step..first_step + horizon]
                .iter()
                .map(|v| v.is_valid())
                .collect();
            units.push(RawUnit { turbine: t, first_step, gbdt: gbdt_fc, gru: gru_fc, truth, mask });
        }
    }

    let alpha = resolve_alpha(cfg, &ds, &models, train_end, clip_hi)?;
    let windows_for = |make: &dyn Fn(&RawUnit) -> Result<Vec<f64>>| -> Result<Vec<EvalWindow>> {
        units
            .iter()
            .map(|u| {
                Ok(EvalWindow {
                    turbine: u.turbine,
                    origin: u.first_step,
                    pred: make(u)?,
                    truth: u.truth.clone(),
                    mask: u.mask.clone(),
                })
            })
            .collect()
    };
    let single = |fc: &Forecast| -> Result<Vec<f64>> {
        Ok(postprocess_chain(std::slice::from_ref(fc), alpha, clip_hi, cfg)?.values)
    };

    let persistence_windows = windows_for(&|u: &RawUnit| {
        Ok(persistence_forecast(&ds, u.turbine, u.first_step, horizon))
    })?;
    let gbdt_windows = windows_for(&|u: &RawUnit| single(&u.gbdt))?;
    let gru_windows = windows_for(&|u: &RawUnit| single(&u.gru))?;
    let ensemble_for = |a: Option<f64>| -> Result<Vec<EvalWindow>> {
        windows_for(&|u: &RawUnit| {
            Ok(postprocess_chain(&[u.gbdt.clone(), u.gru.clone()], a, clip_hi, cfg)?.values)
        })
    };
    let ensemble_windows = ensemble_for(alpha)?;

    let mut reports = BTreeMap::new();
    reports.insert("persistence".to_string(), compute_metrics(&persistence_windows)?);
    reports.insert("gbdt".to_string(), compute_metrics(&gbdt_windows)?);
    reports.insert("gru".to_string(), compute_metrics(&gru_windows)?);
    reports.insert("ensemble".to_string(), compute_metrics(&ensemble_windows)?);

    let mut sweep_rows = Vec::new();
    for &a in sweep {
        let windows = ensemble_for(Some(a))?;
        sweep_rows.push((a, compute_metrics(&windows)?));
    }

    let evaluation = Evaluation {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        reports,
        alpha,
        origins: rel_origins.iter().map(|&r| train_end + r + history).collect(),
        sweep: sweep_rows,
    };
    crate::save_json(&evaluation, arts.eval_report())?;
    write_breakdown(
        &arts.eval_breakdown(),
        &[
            ("persistence", &persistence_windows),
            ("gbdt", &gbdt_windows),
            ("gru", &gru_windows),
            ("ensemble", &ensemble_windows),
        ],
    )?;
    write_curve(&arts.eval_curve(), &ensemble_windows)?;
    log::info!(
        "evaluate: {} windows x {} turbines in {:.2?}",
        rel_origins.len(),
        ds.n_turbines(),
        started.elapsed()
    );
    Ok(evaluation)
}

/// Configured alpha, or one fitted on the last full training-side window
/// (identity when that window does not fit).
fn resolve_alpha(
    cfg: &PipelineConfig,
    ds: &Dataset,
    models: &Models,
    train_end: usize,
    clip_hi: f64,
) -> Result<Option<f64>> {
    if cfg.postprocess.alpha.is_some() {
        return Ok(cfg.postprocess.alpha);
    }
    let horizon = cfg.eval.horizon;
    let needed = horizon + cfg.eval.history_len;
    if train_end < needed {
        log::warn!("alpha fit skipped: training span too short; using identity");
        return Ok(None);
    }
    let first_step = train_end - horizon;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut mask = Vec::new();
    for t in 0..ds.n_turbines() {
        let (gbdt_fc, gru_fc) = forecast_parts(models, ds, cfg, t, first_step)?;
        let fc = postprocess_chain(&[gbdt_fc, gru_fc], None, clip_hi, cfg)?;
        let patv = ds.series(Column::Patv, t);
        let validity = ds.validity_series(t);
        pred.extend_from_slice(&fc.values);
        truth.extend_from_slice(&patv[first_step..first_step + horizon]);
        mask.extend(validity[first_step..first_step + horizon].iter().map(|v| v.is_valid()));
    }
    if !mask.iter().any(|&m| m) {
        log::warn!("alpha fit skipped: validation window fully masked; using identity");
        return Ok(None);
    }
    let adj = fit_alpha(
        &pred,
        &truth,
        &mask,
        cfg.postprocess.alpha_min,
        cfg.postprocess.alpha_max,
        cfg.postprocess.alpha_tol,
    )?;
    if adj.degenerate {
        log::warn!("alpha fit degenerate (all-zero predictions); using identity");
        return Ok(None);
    }
    log::info!("alpha fitted on validation window: {:.6} (loss {:.3})", adj.alpha, adj.loss);
    Ok(Some(adj.alpha))
}

fn write_breakdown(path: &Path, groups: &[(&str, &[EvalWindow])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    w.write_record(["model", "turbine_id", "origin_step", "rmse", "mae"])
        .map_err(|e| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
    for (model, windows) in groups {
        for win in *windows {
            if let Some((rmse, mae)) = window_errors(win) {
                w.write_record([
                    model.to_string(),
                    (win.turbine + 1).to_string(),
                    win.origin.to_string(),
                    rmse.to_string(),
                    mae.to_string(),
                ])
                .map_err(|e| Error::Csv {
                    file: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Plot-ready per-step curve for the ensemble forecast.
fn write_curve(path: &Path, windows: &[EvalWindow]) -> Result<()> {
    let curve = error_curve(windows);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    w.write_record(["step", "mean_abs_error", "mean_prediction", "mean_truth"])
        .map_err(|e| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
    for (i, (abs, pred, truth)) in curve.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            abs.to_string(),
            pred.to_string(),
            truth.to_string(),
        ])
        .map_err(|e| Error::Csv {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Generate a synthetic farm at the configured data/layout paths and record
/// the injection ground truth.
pub fn stage_synth(cfg: &PipelineConfig, spec: &SyntheticFarmSpec) -> Result<()> {
    let started = Instant::now();
    log::info!("synth: config {}", cfg.hash());
    let arts = Artifacts::new(cfg);
    arts.ensure_dir()?;
    let farm = generate(spec)?;
    for path in [&cfg.paths.data, &cfg.paths.layout] {
        if let Some(parent) = Path::new(path).parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::io(parent.display().to_string(), e))?;
            }
        }
    }
    write_farm_csv(&farm.data, &cfg.paths.data)?;
    write_layout_csv(&farm.layout, &cfg.paths.layout)?;
    crate::save_json(&farm.injections, arts.injection_log())?;
    log::info!(
        "synth: {} turbines x {} days, {} injections in {:.2?}",
        spec.n_turbines,
        spec.n_days,
        farm.injections.len(),
        started.elapsed()
    );
    Ok(())
}
