//! Pipeline configuration: one nested TOML file covering every stage, with
//! defaults matching the reference setup. Each field can be overridden in the
//! file or by CLI flags; a SHA-256 hash of the canonical serialization is
//! logged for provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::ClusterMethod;
use crate::ingest::{AbnormalRuleSet, Column};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub data: String,
    pub layout: String,
    pub artifacts: String,
    pub output: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: "data/farm.csv".into(),
            layout: "data/layout.csv".into(),
            artifacts: "artifacts".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub method: ClusterMethod,
    /// Cluster count for per-cluster recurrent models.
    pub k_gru: usize,
    /// Cluster count for per-cluster boosted-tree models.
    pub k_gbdt: usize,
    pub seed: u64,
    pub kmeans_max_iter: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            method: ClusterMethod::SpatialKmeans,
            k_gru: 24,
            k_gbdt: 4,
            seed: 88,
            kmeans_max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Rolling statistic window lengths, in 10-minute steps.
    pub windows: Vec<usize>,
    /// Lag offsets for difference features, in steps.
    pub lags: Vec<usize>,
    /// Columns rolling/lag features are built from.
    pub feature_columns: Vec<Column>,
    pub abnormal: AbnormalRuleSet,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            windows: vec![6, 12, 36, 72, 144],
            lags: vec![1, 6, 36, 144, 288],
            feature_columns: vec![Column::Wspd, Column::Patv],
            abnormal: AbnormalRuleSet::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows sampled (without replacement) per boosting round.
    pub bagging_fraction: f64,
    pub max_rounds: usize,
    /// Stop after this many rounds without validation improvement.
    pub early_stopping_rounds: usize,
    /// Right edges of the horizon buckets; one submodel per bucket.
    pub horizon_buckets: Vec<usize>,
    pub seed: u64,
    /// Subsample origins by this stride when assembling training frames.
    pub origin_stride: usize,
    /// Subsample horizons within a bucket by this stride.
    pub horizon_stride: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            learning_rate: 0.05,
            max_leaves: 63,
            min_samples_leaf: 20,
            bagging_fraction: 0.8,
            max_rounds: 1000,
            early_stopping_rounds: 20,
            horizon_buckets: vec![1, 3, 9, 18, 36, 72, 288],
            seed: 88,
            origin_stride: 1,
            horizon_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GruConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Width of the linear projection of numeric inputs.
    pub numeric_proj: usize,
    /// Embedding width for the time-of-day index (144 entries).
    pub time_embed: usize,
    /// Embedding width for the turbine id.
    pub id_embed: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub grad_clip_norm: f64,
    /// Encoder input length for the long-horizon phase.
    pub pretrain_input_len: usize,
    /// Forecast length of the long head.
    pub output_len: usize,
    /// Input/output length of the short-horizon finetune phase.
    pub finetune_len: usize,
    /// Stride between training window origins; 1 uses every window.
    pub window_stride: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig {
            hidden_size: 48,
            num_layers: 2,
            numeric_proj: 42,
            time_embed: 6,
            id_embed: 6,
            dropout: 0.05,
            learning_rate: 1e-4,
            batch_size: 256,
            pretrain_epochs: 20,
            finetune_epochs: 10,
            grad_clip_norm: 5.0,
            pretrain_input_len: 72,
            output_len: 288,
            finetune_len: 36,
            window_stride: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 88,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    /// Fixed multiplicative adjustment; when unset, fitted on validation data.
    pub alpha: Option<f64>,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Bracket-width tolerance for the one-dimensional alpha search.
    pub alpha_tol: f64,
    /// Centered moving-average window (odd), in steps.
    pub smooth_window: usize,
    pub clip_min: f64,
    /// Upper clip bound; when unset, the training set's max valid power.
    pub clip_max: Option<f64>,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            alpha: None,
            alpha_min: 0.25,
            alpha_max: 4.0,
            alpha_tol: 1e-6,
            smooth_window: 3,
            clip_min: 0.0,
            clip_max: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Windows sampled from the valid origins of the evaluation span.
    pub n_windows: usize,
    pub seed: u64,
    /// History supplied to the models at each origin.
    pub history_len: usize,
    /// Forecast length scored per window.
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_windows: 30,
            seed: 88,
            history_len: 288,
            horizon: 288,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Days 1..=train_days train the models; the remainder is validation.
    pub train_days: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_days: 200 }
    }
}

/// Top-level pipeline configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub clustering: ClusteringConfig,
    pub preprocess: PreprocessConfig,
    pub gbdt: GbdtConfig,
    pub gru: GruConfig,
    pub postprocess: PostprocessConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Load from a TOML file; absent fields keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidParam(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// SHA-256 of the canonical JSON serialization, hex-encoded. Logged by
    /// every stage so artifacts can be traced to the exact configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name} must be positive, got {v}")))
            }
        }
        if self.split.train_days == 0 {
            return Err(Error::InvalidParam("split.train_days must be >= 1".into()));
        }
        if self.clustering.k_gru == 0 || self.clustering.k_gbdt == 0 {
            return Err(Error::InvalidParam("cluster counts must be >= 1".into()));
        }
        if self.preprocess.windows.is_empty() || self.preprocess.windows.iter().any(|&w| w < 2) {
            return Err(Error::InvalidParam(
                "preprocess.windows must be non-empty with entries >= 2".into(),
            ));
        }
        if self.preprocess.lags.iter().any(|&l| l == 0) {
            return Err(Error::InvalidParam("preprocess.lags entries must be >= 1".into()));
        }
        if self.preprocess.feature_columns.is_empty() {
            return Err(Error::InvalidParam("preprocess.feature_columns must be non-empty".into()));
        }
        positive("gbdt.learning_rate", self.gbdt.learning_rate)?;
        if self.gbdt.max_leaves < 2 {
            return Err(Error::InvalidParam("gbdt.max_leaves must be >= 2".into()));
        }
        if self.gbdt.min_samples_leaf == 0 {
            return Err(Error::InvalidParam("gbdt.min_samples_leaf must be >= 1".into()));
        }
        if !(self.gbdt.bagging_fraction > 0.0 && self.gbdt.bagging_fraction <= 1.0) {
            return Err(Error::InvalidParam("gbdt.bagging_fraction must be in (0, 1]".into()));
        }
        if self.gbdt.max_rounds == 0 {
            return Err(Error::InvalidParam("gbdt.max_rounds must be >= 1".into()));
        }
        let buckets = &self.gbdt.horizon_buckets;
        if buckets.is_empty()
            || buckets[0] == 0
            || buckets.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidParam(
                "gbdt.horizon_buckets must be strictly increasing and positive".into(),
            ));
        }
        if self.gbdt.origin_stride == 0 || self.gbdt.horizon_stride == 0 {
            return Err(Error::InvalidParam("gbdt strides must be >= 1".into()));
        }
        if self.gru.hidden_size == 0 || self.gru.num_layers == 0 {
            return Err(Error::InvalidParam("gru dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.gru.dropout) {
            return Err(Error::InvalidParam("gru.dropout must be in [0, 1)".into()));
        }
        positive("gru.learning_rate", self.gru.learning_rate)?;
        if self.gru.batch_size == 0 {
            return Err(Error::InvalidParam("gru.batch_size must be >= 1".into()));
        }
        if self.gru.pretrain_input_len == 0
            || self.gru.output_len == 0
            || self.gru.finetune_len == 0
        {
            return Err(Error::InvalidParam("gru sequence lengths must be >= 1".into()));
        }
        if self.gru.finetune_len > self.gru.output_len {
            return Err(Error::InvalidParam(
                "gru.finetune_len must not exceed gru.output_len".into(),
            ));
        }
        if self.gru.window_stride == 0 {
            return Err(Error::InvalidParam("gru.window_stride must be >= 1".into()));
        }
        positive("gru.grad_clip_norm", self.gru.grad_clip_norm)?;
        if let Some(alpha) = self.postprocess.alpha {
            positive("postprocess.alpha", alpha)?;
        }
        if !(self.postprocess.alpha_min > 0.0
            && self.postprocess.alpha_min < self.postprocess.alpha_max)
        {
            return Err(Error::InvalidParam(
                "postprocess alpha bounds must satisfy 0 < alpha_min < alpha_max".into(),
            ));
        }
        positive("postprocess.alpha_tol", self.postprocess.alpha_tol)?;
        if self.postprocess.smooth_window % 2 == 0 {
            return Err(Error::InvalidParam("postprocess.smooth_window must be odd".into()));
        }
        if self.eval.n_windows == 0 || self.eval.horizon == 0 || self.eval.history_len == 0 {
            return Err(Error::InvalidParam("eval sizes must be >= 1".into()));
        }
        if let Some(last) = buckets.last() {
            if *last != self.eval.horizon {
                return Err(Error::InvalidParam(format!(
                    "last horizon bucket ({last}) must equal eval.horizon ({})",
                    self.eval.horizon
                )));
            }
        }
        Ok(())
    }
}
