//! Wind farm power forecasting pipeline.
//!
//! Implements the full chain from raw 10-minute SCADA exports to 288-step
//! (48 hour) per-turbine power forecasts:
//!
//! - [`ingest`]: CSV parsing, abnormality flagging, gap materialization
//! - [`cluster`]: spatial k-means and correlation-based turbine grouping
//! - [`preprocess`]: two-step imputation, robust scaling, rolling features,
//!   supervised window assembly
//! - [`gbdt`]: gradient-boosted regression trees with per-horizon-bucket
//!   submodels
//! - [`gru`]: gated recurrent network trained by BPTT with Adam, with a
//!   pretrain/finetune schedule and short-horizon output stitching
//! - [`postprocess`]: ensembling, smoothing, clipping and the convex
//!   scalar drift adjustment
//! - [`eval`]: masked RMSE/MAE metrics and rolling-window test
//!   reconstruction
//! - [`synth`]: a deterministic synthetic wind farm generator for
//!   desk-scale testing
//! - [`pipeline`]: stage orchestration and versioned artifact I/O

pub mod cluster;
pub mod config;
pub mod eval;
pub mod gbdt;
pub mod gru;
pub mod ingest;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod synth;

pub use cluster::{ClusterMethod, ClusterModel};
pub use config::PipelineConfig;
pub use eval::EvalReport;
pub use gbdt::{GbdtEnsemble, GbdtModel, RegressionTree};
pub use gru::{GruCell, GruNetwork};
pub use ingest::{Dataset, TurbineLayout, TurbineRecord, Validity};
pub use postprocess::{AlphaAdjustment, Forecast};
pub use preprocess::{FeatureFrame, RobustScaler, WindowSample};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any pipeline stage.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("I/O error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in '{file}': {message}")]
    Csv { file: String, message: String },

    #[error("missing column '{column}' in '{file}'")]
    MissingColumn { file: String, column: String },

    #[error("bad value in '{file}' row {row}: {message}")]
    BadValue {
        file: String,
        row: usize,
        message: String,
    },

    #[error("duplicate record for turbine {turbine} day {day} slot {slot}")]
    DuplicateRecord { turbine: u32, day: u32, slot: u32 },

    #[error("unknown turbine id {turbine} (expected 1..={max})")]
    UnknownTurbine { turbine: u32, max: u32 },

    #[error("duplicate layout entry for turbine {0}")]
    DuplicateLayout(u32),

    #[error("turbine {turbine} field {field} has no valid value anywhere and no cluster peer to impute from")]
    FullyInvalidSeries { turbine: u32, field: String },

    #[error("column '{0}' has no valid values")]
    EmptyColumn(String),

    #[error("feature columns do not match the model: {0}")]
    ColumnMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{0}")]
    InvalidData(String),

    #[error("artifact '{path}' not found; run `{produced_by}` first")]
    MissingArtifact { path: String, produced_by: String },

    #[error("artifact '{path}' has schema version {found}, this build supports up to {supported}")]
    SchemaVersion {
        path: String,
        found: u32,
        supported: u32,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Write a value as pretty JSON. serde_json renders f64 with the shortest
/// round-trip representation, so artifacts are bit-stable and lossless.
pub(crate) fn save_json<T: serde::Serialize>(
    value: &T,
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Serde(e.to_string()))?;
    use std::io::Write;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn load_json<T: serde::de::DeserializeOwned>(
    path: impl AsRef<std::path::Path>,
) -> Result<T> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}
