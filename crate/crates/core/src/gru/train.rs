//! Continual training of the recurrent forecaster: a long-horizon pretrain
//! phase followed by a short-horizon finetune phase that keeps the long head
//! frozen, plus batch loss/gradient entry points and stitched prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::network::{GruGradients, GruNetwork, Head, PreparedWindow};
use crate::cluster::ClusterModel;
use crate::config::GruConfig;
use crate::ingest::{Column, Dataset, STEPS_PER_DAY};
use crate::preprocess::{extract_window, RobustScaler, WindowSample};
use crate::{Error, Result};

/// Masked MSE over a batch in eval mode. `None` when the batch has no
/// unmasked target at all.
pub fn batch_loss(net: &GruNetwork, batch: &[PreparedWindow], head: Head) -> Result<Option<f64>> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for w in batch {
        let pred = net.predict_scaled(w, head)?;
        let (s, m) = masked_sq_err(&pred, &w.target, &w.target_mask)?;
        sq += s;
        count += m;
    }
    Ok(if count == 0 { None } else { Some(sq / count as f64) })
}

/// Masked MSE plus accumulated gradients over a batch. Train mode when a
/// dropout rng is supplied. `None` signals a fully masked batch (skipped,
/// no update).
pub fn batch_gradients(
    net: &GruNetwork,
    batch: &[PreparedWindow],
    head: Head,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Option<(f64, GruGradients)>> {
    let mut count = 0usize;
    for w in batch {
        if w.target.len() != w.target_mask.len() {
            return Err(Error::ShapeMismatch("target and mask lengths differ".into()));
        }
        count += w.target_mask.iter().filter(|m| **m).count();
    }
    if count == 0 {
        return Ok(None);
    }
    let mut grads = GruGradients::zeros_like(net);
    let mut sq = 0.0;
    let scale = 2.0 / count as f64;
    for w in batch {
        let (pred, cache) = net.forward_cached(w, head, dropout_rng.as_deref_mut())?;
        if pred.len() != w.target.len() {
            return Err(Error::ShapeMismatch(format!(
                "head emits {} steps, target has {}",
                pred.len(),
                w.target.len()
            )));
        }
        let mut dpred = vec![0.0; pred.len()];
        for j in 0..pred.len() {
            if w.target_mask[j] {
                let diff = pred[j] - w.target[j];
                sq += diff * diff;
                dpred[j] = scale * diff;
            }
        }
        net.backward(&cache, &dpred, &mut grads);
    }
    Ok(Some((sq / count as f64, grads)))
}

fn masked_sq_err(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, usize)> {
    if pred.len() != target.len() || target.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {} target {} mask {} lengths differ",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for j in 0..pred.len() {
        if mask[j] {
            let diff = pred[j] - target[j];
            sq += diff * diff;
            count += 1;
        }
    }
    Ok((sq, count))
}

/// Per-epoch bookkeeping for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Masked MSE over all updating batches; `None` if every batch skipped.
    pub train_loss: Option<f64>,
    /// Eval-mode masked MSE on held-out windows; `None` without any.
    pub valid_loss: Option<f64>,
    pub batches: usize,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pretrain: Vec<EpochStats>,
    pub finetune: Vec<EpochStats>,
    pub pretrain_train_windows: usize,
    pub pretrain_valid_windows: usize,
    pub finetune_train_windows: usize,
    pub finetune_valid_windows: usize,
}

/// Light handle for lazy window materialization.
#[derive(Debug, Clone, Copy)]
struct WindowRef {
    turbine: usize,
    origin: usize,
}

/// Windows for one (input_len, output_len) geometry, split by where the
/// target span falls: fully inside the training days goes to train, starting
/// after them goes to validation, straddlers are dropped.
fn split_windows(
    ds: &Dataset,
    members: &[usize],
    input_len: usize,
    output_len: usize,
    stride: usize,
    train_days: usize,
) -> (Vec<WindowRef>, Vec<WindowRef>) {
    let n_steps = ds.n_steps();
    let boundary = train_days * STEPS_PER_DAY as usize;
    let mut train = Vec::new();
    let mut valid = Vec::new();
    if n_steps < input_len + output_len {
        return (train, valid);
    }
    for &turbine in members {
        let mut origin = 0usize;
        while origin + input_len + output_len <= n_steps {
            let target_start = origin + input_len;
            let target_end = target_start + output_len;
            if target_end <= boundary {
                train.push(WindowRef { turbine, origin });
            } else if target_start >= boundary {
                valid.push(WindowRef { turbine, origin });
            }
            origin += stride;
        }
    }
    (train, valid)
}

fn materialize(
    ds: &Dataset,
    net: &GruNetwork,
    scaler: &RobustScaler,
    refs: &[WindowRef],
    input_len: usize,
    output_len: usize,
) -> Result<Vec<PreparedWindow>> {
    refs.iter()
        .map(|r| {
            let sample = extract_window(ds, r.turbine, r.origin, input_len, output_len);
            net.prepare(&sample, scaler)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    net: &mut GruNetwork,
    ds: &Dataset,
    scaler: &RobustScaler,
    train_refs: &[WindowRef],
    valid_refs: &[WindowRef],
    head: Head,
    epochs: usize,
    input_len: usize,
    output_len: usize,
    cfg: &GruConfig,
    rng: &mut ChaCha8Rng,
    phase_name: &str,
) -> Result<Vec<EpochStats>> {
    let mask = net.trainable_mask(head);
    let mut adam = AdamState::new(net.n_params(), cfg);
    let mut stats = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..train_refs.len()).collect();

    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_sq = 0.0;
        let mut epoch_count = 0usize;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batches += 1;
            let refs: Vec<WindowRef> = chunk.iter().map(|&i| train_refs[i]).collect();
            let batch = materialize(ds, net, scaler, &refs, input_len, output_len)?;
            let unmasked: usize = batch
                .iter()
                .map(|w| w.target_mask.iter().filter(|m| **m).count())
                .sum();
            match batch_gradients(net, &batch, head, Some(rng))? {
                None => {
                    skipped += 1;
                    continue;
                }
                Some((loss, mut grads)) => {
                    grads.clip_global_norm(cfg.grad_clip_norm);
                    let mut flat = net.flatten();
                    adam.step(&mut flat, &grads.flatten(), Some(&mask))?;
                    net.unflatten(&flat)?;
                    epoch_sq += loss * unmasked as f64;
                    epoch_count += unmasked;
                }
            }
        }
        let train_loss = if epoch_count > 0 {
            Some(epoch_sq / epoch_count as f64)
        } else {
            None
        };
        let valid_loss = if valid_refs.is_empty() {
            None
        } else {
            let mut sq = 0.0;
            let mut count = 0usize;
            for chunk in valid_refs.chunks(cfg.batch_size) {
                let batch = materialize(ds, net, scaler, chunk, input_len, output_len)?;
                for w in &batch {
                    let pred = net.predict_scaled(w, head)?;
                    let (s, m) = masked_sq_err(&pred, &w.target, &w.target_mask)?;
                    sq += s;
                    count += m;
                }
            }
            if count == 0 { None } else { Some(sq / count as f64) }
        };
        log::info!(
            "{phase_name} epoch {}/{}: train {:?} valid {:?} ({} batches, {} skipped)",
            epoch + 1,
            epochs,
            train_loss,
            valid_loss,
            batches,
            skipped
        );
        stats.push(EpochStats {
            epoch,
            train_loss,
            valid_loss,
            batches,
            skipped_batches: skipped,
        });
    }
    Ok(stats)
}

/// Two-phase continual training for one cluster. Phase 1 trains the encoder
/// and long head on (pretrain_input_len -> output_len) windows; phase 2
/// restarts the optimizer and trains the encoder and short head on
/// (finetune_len -> finetune_len) windows while the long head stays frozen.
pub fn train_continual(
    ds: &Dataset,
    members: &[usize],
    scaler: &RobustScaler,
    cfg: &GruConfig,
    train_days: usize,
    seed: u64,
) -> Result<(GruNetwork, TrainReport)> {
    if !ds.is_imputed() {
        return Err(Error::InvalidData(
            "recurrent training requires an imputed dataset".into(),
        ));
    }
    if members.is_empty() {
        return Err(Error::InvalidData("cluster has no member turbines".into()));
    }
    let turbine_ids: Vec<u32> = members.iter().map(|&t| t as u32 + 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = GruNetwork::new(cfg, &turbine_ids, &mut rng)?;

    let (long_train, long_valid) = split_windows(
        ds,
        members,
        cfg.pretrain_input_len,
        cfg.output_len,
        cfg.window_stride,
        train_days,
    );
    if long_train.is_empty() {
        return Err(Error::InvalidData(format!(
            "no pretrain windows: {} steps cannot fit input {} + output {} inside {} train days",
            ds.n_steps(),
            cfg.pretrain_input_len,
            cfg.output_len,
            train_days
        )));
    }
    let pretrain = run_phase(
        &mut net,
        ds,
        scaler,
        &long_train,
        &long_valid,
        Head::Long,
        cfg.pretrain_epochs,
        cfg.pretrain_input_len,
        cfg.output_len,
        cfg,
        &mut rng,
        "pretrain",
    )?;

    let mut report = TrainReport {
        pretrain,
        pretrain_train_windows: long_train.len(),
        pretrain_valid_windows: long_valid.len(),
        ..TrainReport::default()
    };

    if cfg.finetune_epochs > 0 {
        let (short_train, short_valid) = split_windows(
            ds,
            members,
            cfg.finetune_len,
            cfg.finetune_len,
            cfg.window_stride,
            train_days,
        );
        if short_train.is_empty() {
            return Err(Error::InvalidData("no finetune windows in training days".into()));
        }
        let finetune = run_phase(
            &mut net,
            ds,
            scaler,
            &short_train,
            &short_valid,
            Head::Short,
            cfg.finetune_epochs,
            cfg.finetune_len,
            cfg.finetune_len,
            cfg,
            &mut rng,
            "finetune",
        )?;
        report.finetune = finetune;
        report.finetune_train_windows = short_train.len();
        report.finetune_valid_windows = short_valid.len();
        net.short_head_trained = true;
    } else {
        log::warn!("finetune_epochs = 0: short head left at init and flagged unusable");
    }
    Ok((net, report))
}

/// Per-cluster networks plus the scalers that map between power units and
/// network space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruModelSet {
    pub schema_version: u32,
    pub networks: Vec<GruNetwork>,
    pub scalers: Vec<RobustScaler>,
    pub reports: Vec<TrainReport>,
}

impl GruModelSet {
    pub fn n_clusters(&self) -> usize {
        self.networks.len()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::save_json(self, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let set: GruModelSet = crate::load_json(path.as_ref())?;
        if set.schema_version != super::network::GRU_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.as_ref().display().to_string(),
                found: set.schema_version,
                supported: super::network::GRU_SCHEMA_VERSION,
            });
        }
        if set.networks.len() != set.scalers.len() {
            return Err(Error::InvalidData(format!(
                "{} networks but {} scalers",
                set.networks.len(),
                set.scalers.len()
            )));
        }
        for net in &set.networks {
            net.validate()?;
        }
        Ok(set)
    }
}

fn cluster_seed(base: u64, cluster: usize) -> u64 {
    base.wrapping_add(cluster as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train one network per cluster. The dataset must be imputed; scalers are
/// fitted per cluster on originally-VALID values only.
pub fn train_all_clusters(
    ds: &Dataset,
    clusters: &ClusterModel,
    cfg: &GruConfig,
    train_days: usize,
) -> Result<GruModelSet> {
    clusters.validate(ds.n_turbines())?;
    let train_ds = ds.slice_days(1, train_days.min(ds.n_days()))?;
    let mut networks = Vec::new();
    let mut scalers = Vec::new();
    let mut reports = Vec::new();
    for c in 0..clusters.k {
        let members = clusters.members(c);
        let scaler = RobustScaler::fit_dataset(&train_ds, &Column::ALL, Some(members.as_slice()))?;
        let (net, report) =
            train_continual(ds, &members, &scaler, cfg, train_days, cluster_seed(cfg.seed, c))?;
        networks.push(net);
        scalers.push(scaler);
        reports.push(report);
    }
    Ok(GruModelSet {
        schema_version: super::network::GRU_SCHEMA_VERSION,
        networks,
        scalers,
        reports,
    })
}

/// Long-head-only forecast in power units.
pub fn predict_long(
    net: &GruNetwork,
    scaler: &RobustScaler,
    long_window: &WindowSample,
) -> Result<Vec<f64>> {
    let prepared = net.prepare(long_window, scaler)?;
    let scaled = net.predict_scaled(&prepared, Head::Long)?;
    unscale(scaler, scaled)
}

/// Stitched forecast: the short head supplies the first `out_short` steps,
/// the long head the remainder. Both windows must end at the same forecast
/// origin.
pub fn predict_stitched(
    net: &GruNetwork,
    scaler: &RobustScaler,
    long_window: &WindowSample,
    short_window: &WindowSample,
) -> Result<Vec<f64>> {
    if !net.short_head_trained {
        return Err(Error::InvalidData(
            "short head was never finetuned; stitched prediction unavailable".into(),
        ));
    }
    if long_window.turbine != short_window.turbine {
        return Err(Error::InvalidData(format!(
            "stitch windows reference turbines {} and {}",
            long_window.turbine, short_window.turbine
        )));
    }
    let long_origin = long_window.origin + long_window.input_len;
    let short_origin = short_window.origin + short_window.input_len;
    if long_origin != short_origin {
        return Err(Error::InvalidData(format!(
            "stitch windows disagree on forecast origin: {long_origin} vs {short_origin}"
        )));
    }
    let long_prep = net.prepare(long_window, scaler)?;
    let short_prep = net.prepare(short_window, scaler)?;
    let long_pred = net.predict_scaled(&long_prep, Head::Long)?;
    let short_pred = net.predict_scaled(&short_prep, Head::Short)?;
    let mut out = long_pred;
    out[..short_pred.len()].copy_from_slice(&short_pred);
    unscale(scaler, out)
}

fn unscale(scaler: &RobustScaler, mut scaled: Vec<f64>) -> Result<Vec<f64>> {
    let patv = scaler.column_index(Column::Patv.name())?;
    for v in scaled.iter_mut() {
        *v = scaler.inverse(patv, *v);
    }
    Ok(scaled)
}
