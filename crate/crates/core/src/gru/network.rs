//! Stacked GRU network with a numeric input projection, time-of-day and
//! turbine embeddings, and two direct linear forecast heads (long and short
//! horizon) read off the final hidden state of the top layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{GruCell, StepCache};
use super::linalg::{matvec, matvec_t_acc, outer_acc};
use crate::config::GruConfig;
use crate::ingest::{Column, STEPS_PER_DAY};
use crate::preprocess::{RobustScaler, WindowSample};
use crate::{Error, Result};

pub(crate) const GRU_SCHEMA_VERSION: u32 = 1;

/// Which forecast head a forward pass reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Long,
    Short,
}

/// Recurrent forecaster for one turbine cluster. All weight tensors are
/// row-major; serialization carries the shapes through the explicit dimension
/// fields, so a reload reproduces eval-mode outputs bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruNetwork {
    pub schema_version: u32,
    pub n_numeric: usize,
    pub numeric_proj: usize,
    pub time_embed_dim: usize,
    pub id_embed_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub out_long: usize,
    pub out_short: usize,
    pub dropout: f64,
    /// Turbine ids (1-based) with an embedding row, in ascending order.
    pub turbine_ids: Vec<u32>,
    /// Set once the short head has been through finetuning; stitched
    /// prediction refuses to use an untrained short head.
    pub short_head_trained: bool,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    /// STEPS_PER_DAY x time_embed_dim.
    pub time_embed: Vec<f64>,
    /// turbine_ids.len() x id_embed_dim.
    pub id_embed: Vec<f64>,
    pub cells: Vec<GruCell>,
    pub head_long_w: Vec<f64>,
    pub head_long_b: Vec<f64>,
    pub head_short_w: Vec<f64>,
    pub head_short_b: Vec<f64>,
}

/// One training or inference sample after scaling and embedding-row
/// resolution: `x` is `[seq_len x n_numeric]` scaled input, targets are in
/// scaled power units.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub x: Vec<f64>,
    pub seq_len: usize,
    pub time_slots: Vec<u32>,
    pub id_row: usize,
    pub target: Vec<f64>,
    pub target_mask: Vec<bool>,
    /// Absolute step index of the forecast origin (first predicted step).
    pub origin: usize,
}

/// Everything the backward pass needs from a forward run.
pub(crate) struct ForwardCache {
    head: Head,
    id_row: usize,
    time_slots: Vec<u32>,
    numeric: Vec<Vec<f64>>,
    /// Per layer, per step.
    steps: Vec<Vec<StepCache>>,
    /// Inverted dropout scale factors per inter-layer gap, per step
    /// (empty in eval mode or when dropout is zero).
    drop_masks: Vec<Vec<Vec<f64>>>,
    /// Final hidden state of the top layer.
    top_h: Vec<f64>,
}

/// Mirror of the network's trainable tensors, used to accumulate gradients
/// over a batch. Cell gradients reuse `GruCell` as a plain container.
pub struct GruGradients {
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    pub time_embed: Vec<f64>,
    pub id_embed: Vec<f64>,
    pub cells: Vec<GruCell>,
    pub head_long_w: Vec<f64>,
    pub head_long_b: Vec<f64>,
    pub head_short_w: Vec<f64>,
    pub head_short_b: Vec<f64>,
}

impl GruNetwork {
    /// Fresh network with uniform +-1/sqrt(hidden_size) weights, zero biases.
    pub fn new(cfg: &GruConfig, turbine_ids: &[u32], rng: &mut ChaCha8Rng) -> Result<Self> {
        if turbine_ids.is_empty() {
            return Err(Error::InvalidParam("network needs at least one turbine".into()));
        }
        let n_numeric = Column::COUNT;
        let input_width = cfg.numeric_proj + cfg.time_embed + cfg.id_embed;
        let mut cells = Vec::with_capacity(cfg.num_layers);
        for layer in 0..cfg.num_layers {
            let input = if layer == 0 { input_width } else { cfg.hidden_size };
            cells.push(GruCell::zeros(input, cfg.hidden_size));
        }
        let mut net = GruNetwork {
            schema_version: GRU_SCHEMA_VERSION,
            n_numeric,
            numeric_proj: cfg.numeric_proj,
            time_embed_dim: cfg.time_embed,
            id_embed_dim: cfg.id_embed,
            hidden_size: cfg.hidden_size,
            num_layers: cfg.num_layers,
            out_long: cfg.output_len,
            out_short: cfg.finetune_len,
            dropout: cfg.dropout,
            turbine_ids: turbine_ids.to_vec(),
            short_head_trained: false,
            proj_w: vec![0.0; cfg.numeric_proj * n_numeric],
            proj_b: vec![0.0; cfg.numeric_proj],
            time_embed: vec![0.0; STEPS_PER_DAY as usize * cfg.time_embed],
            id_embed: vec![0.0; turbine_ids.len() * cfg.id_embed],
            cells,
            head_long_w: vec![0.0; cfg.output_len * cfg.hidden_size],
            head_long_b: vec![0.0; cfg.output_len],
            head_short_w: vec![0.0; cfg.finetune_len * cfg.hidden_size],
            head_short_b: vec![0.0; cfg.finetune_len],
        };
        let scale = 1.0 / (cfg.hidden_size as f64).sqrt();
        let fill = |rng: &mut ChaCha8Rng, v: &mut Vec<f64>| {
            for w in v.iter_mut() {
                *w = rng.gen_range(-scale..scale);
            }
        };
        fill(rng, &mut net.proj_w);
        fill(rng, &mut net.time_embed);
        fill(rng, &mut net.id_embed);
        for cell in net.cells.iter_mut() {
            fill(rng, &mut cell.w_ir);
            fill(rng, &mut cell.w_iz);
            fill(rng, &mut cell.w_in);
            fill(rng, &mut cell.w_hr);
            fill(rng, &mut cell.w_hz);
            fill(rng, &mut cell.w_hn);
        }
        fill(rng, &mut net.head_long_w);
        fill(rng, &mut net.head_short_w);
        Ok(net)
    }

    pub fn input_width(&self) -> usize {
        self.numeric_proj + self.time_embed_dim + self.id_embed_dim
    }

    pub fn head_len(&self, head: Head) -> usize {
        match head {
            Head::Long => self.out_long,
            Head::Short => self.out_short,
        }
    }

    /// Embedding row for a 1-based turbine id.
    pub fn id_row(&self, turbine_id: u32) -> Result<usize> {
        self.turbine_ids
            .binary_search(&turbine_id)
            .map_err(|_| Error::UnknownTurbine {
                turbine: turbine_id,
                max: self.turbine_ids.len() as u32,
            })
    }

    /// Scale a raw window into network space and resolve the embedding row.
    /// The sample's turbine is a 0-based dataset index; embedding rows are
    /// keyed by the 1-based turbine id.
    pub fn prepare(&self, sample: &WindowSample, scaler: &RobustScaler) -> Result<PreparedWindow> {
        let id_row = self.id_row(sample.turbine as u32 + 1)?;
        if scaler.n_columns() != self.n_numeric {
            return Err(Error::ShapeMismatch(format!(
                "scaler has {} columns, network expects {}",
                scaler.n_columns(),
                self.n_numeric
            )));
        }
        let patv = scaler.column_index(Column::Patv.name())?;
        let col_idx: Vec<usize> = Column::ALL
            .iter()
            .map(|c| scaler.column_index(c.name()))
            .collect::<Result<_>>()?;
        let mut x = sample.input.clone();
        for row in 0..sample.input_len {
            let base = row * self.n_numeric;
            for c in 0..self.n_numeric {
                x[base + c] = scaler.transform(col_idx[c], x[base + c]);
            }
        }
        let target: Vec<f64> = sample
            .target
            .iter()
            .map(|&v| scaler.transform(patv, v))
            .collect();
        Ok(PreparedWindow {
            x,
            seq_len: sample.input_len,
            time_slots: sample.time_of_day.clone(),
            id_row,
            target,
            target_mask: sample.target_mask.clone(),
            origin: sample.origin + sample.input_len,
        })
    }

    fn embed_step(&self, numeric: &[f64], slot: u32, id_row: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.input_width()];
        matvec(
            &self.proj_w,
            self.numeric_proj,
            self.n_numeric,
            numeric,
            &mut e[..self.numeric_proj],
        );
        for (i, v) in e[..self.numeric_proj].iter_mut().enumerate() {
            *v += self.proj_b[i];
        }
        let t0 = slot as usize * self.time_embed_dim;
        e[self.numeric_proj..self.numeric_proj + self.time_embed_dim]
            .copy_from_slice(&self.time_embed[t0..t0 + self.time_embed_dim]);
        let i0 = id_row * self.id_embed_dim;
        e[self.numeric_proj + self.time_embed_dim..]
            .copy_from_slice(&self.id_embed[i0..i0 + self.id_embed_dim]);
        e
    }

    /// Forward pass. In train mode (`dropout_rng` supplied) inter-layer
    /// inverted dropout is active; eval mode is deterministic.
    pub(crate) fn forward_cached(
        &self,
        window: &PreparedWindow,
        head: Head,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        if window.x.len() != window.seq_len * self.n_numeric
            || window.time_slots.len() != window.seq_len
        {
            return Err(Error::ShapeMismatch(format!(
                "window claims {} steps but has {} values and {} slots",
                window.seq_len,
                window.x.len(),
                window.time_slots.len()
            )));
        }
        if window.id_row >= self.turbine_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "embedding row {} out of range ({} turbines)",
                window.id_row,
                self.turbine_ids.len()
            )));
        }
        let hs = self.hidden_size;
        let use_dropout = self.dropout > 0.0 && dropout_rng.is_some();
        let keep = 1.0 - self.dropout;
        let mut rng = dropout_rng;

        let mut numeric = Vec::with_capacity(window.seq_len);
        let mut steps: Vec<Vec<StepCache>> = vec![Vec::with_capacity(window.seq_len); self.num_layers];
        let mut drop_masks: Vec<Vec<Vec<f64>>> = if use_dropout {
            vec![Vec::with_capacity(window.seq_len); self.num_layers.saturating_sub(1)]
        } else {
            Vec::new()
        };
        let mut hidden: Vec<Vec<f64>> = vec![vec![0.0; hs]; self.num_layers];

        for t in 0..window.seq_len {
            let raw = &window.x[t * self.n_numeric..(t + 1) * self.n_numeric];
            numeric.push(raw.to_vec());
            let mut layer_in = self.embed_step(raw, window.time_slots[t], window.id_row);
            for layer in 0..self.num_layers {
                let (h, cache) = self.cells[layer].step_cached(&layer_in, &hidden[layer]);
                hidden[layer] = h.clone();
                steps[layer].push(cache);
                if layer + 1 < self.num_layers {
                    layer_in = h;
                    if use_dropout {
                        let rng = rng.as_mut().expect("dropout rng present in train mode");
                        let mask: Vec<f64> = (0..hs)
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        for (v, m) in layer_in.iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        drop_masks[layer].push(mask);
                    }
                }
            }
        }

        let top_h = hidden[self.num_layers - 1].clone();
        let (w, b, out_len) = match head {
            Head::Long => (&self.head_long_w, &self.head_long_b, self.out_long),
            Head::Short => (&self.head_short_w, &self.head_short_b, self.out_short),
        };
        let mut pred = vec![0.0; out_len];
        matvec(w, out_len, hs, &top_h, &mut pred);
        for (p, bias) in pred.iter_mut().zip(b) {
            *p += bias;
        }
        let cache = ForwardCache {
            head,
            id_row: window.id_row,
            time_slots: window.time_slots.clone(),
            numeric,
            steps,
            drop_masks,
            top_h,
        };
        Ok((pred, cache))
    }

    /// Eval-mode prediction in scaled units.
    pub fn predict_scaled(&self, window: &PreparedWindow, head: Head) -> Result<Vec<f64>> {
        Ok(self.forward_cached(window, head, None)?.0)
    }

    /// Backward through one cached forward pass. `dpred` is the loss
    /// gradient at the head output; gradients accumulate into `grads`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dpred: &[f64], grads: &mut GruGradients) {
        let hs = self.hidden_size;
        let seq_len = cache.numeric.len();
        let (w, out_len, gw, gb) = match cache.head {
            Head::Long => (
                &self.head_long_w,
                self.out_long,
                &mut grads.head_long_w,
                &mut grads.head_long_b,
            ),
            Head::Short => (
                &self.head_short_w,
                self.out_short,
                &mut grads.head_short_w,
                &mut grads.head_short_b,
            ),
        };
        debug_assert_eq!(dpred.len(), out_len);
        outer_acc(gw, out_len, hs, dpred, &cache.top_h);
        for (g, d) in gb.iter_mut().zip(dpred) {
            *g += d;
        }

        // dh_ext[layer][t]: gradient arriving at layer's hidden output at step
        // t from above (head for the top layer, next layer's input otherwise).
        let mut dh_ext: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; hs]; seq_len]; self.num_layers];
        matvec_t_acc(w, out_len, hs, dpred, &mut dh_ext[self.num_layers - 1][seq_len - 1]);

        let use_dropout = !cache.drop_masks.is_empty();
        for layer in (0..self.num_layers).rev() {
            let input_size = self.cells[layer].input_size;
            let mut dh_next = vec![0.0; hs];
            for t in (0..seq_len).rev() {
                let mut dh = dh_ext[layer][t].clone();
                for (a, b) in dh.iter_mut().zip(&dh_next) {
                    *a += *b;
                }
                let mut dx = vec![0.0; input_size];
                let mut dh_prev = vec![0.0; hs];
                self.cells[layer].backward_step(
                    &cache.steps[layer][t],
                    &dh,
                    &mut grads.cells[layer],
                    &mut dx,
                    &mut dh_prev,
                );
                dh_next = dh_prev;
                if layer > 0 {
                    // dx is wrt the (possibly dropped) output of layer - 1.
                    if use_dropout {
                        for (v, m) in dx.iter_mut().zip(&cache.drop_masks[layer - 1][t]) {
                            *v *= m;
                        }
                    }
                    for (a, b) in dh_ext[layer - 1][t].iter_mut().zip(&dx) {
                        *a += *b;
                    }
                } else {
                    // dx is wrt the embedded input: split into projection,
                    // time embedding row, and id embedding row parts.
                    let dproj = &dx[..self.numeric_proj];
                    outer_acc(
                        &mut grads.proj_w,
                        self.numeric_proj,
                        self.n_numeric,
                        dproj,
                        &cache.numeric[t],
                    );
                    for (g, d) in grads.proj_b.iter_mut().zip(dproj) {
                        *g += d;
                    }
                    let t0 = cache.time_slots[t] as usize * self.time_embed_dim;
                    for (i, d) in dx
                        [self.numeric_proj..self.numeric_proj + self.time_embed_dim]
                        .iter()
                        .enumerate()
                    {
                        grads.time_embed[t0 + i] += d;
                    }
                    let i0 = cache.id_row * self.id_embed_dim;
                    for (i, d) in dx[self.numeric_proj + self.time_embed_dim..].iter().enumerate()
                    {
                        grads.id_embed[i0 + i] += d;
                    }
                }
            }
        }
    }

    /// All trainable tensors in canonical order. Must agree with
    /// `tensors_mut` and the gradient mirror.
    pub(crate) fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> =
            vec![&self.proj_w, &self.proj_b, &self.time_embed, &self.id_embed];
        for cell in &self.cells {
            v.extend(cell.tensors());
        }
        v.push(&self.head_long_w);
        v.push(&self.head_long_b);
        v.push(&self.head_short_w);
        v.push(&self.head_short_b);
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = vec![
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.time_embed,
            &mut self.id_embed,
        ];
        for cell in &mut self.cells {
            v.extend(cell.tensors_mut());
        }
        v.push(&mut self.head_long_w);
        v.push(&mut self.head_long_b);
        v.push(&mut self.head_short_w);
        v.push(&mut self.head_short_b);
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        for t in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} values, network has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// Index range of a head's parameters inside the flattened vector.
    pub fn head_range(&self, head: Head) -> std::ops::Range<usize> {
        let mut off = 0;
        let long_len = self.head_long_w.len() + self.head_long_b.len();
        let short_len = self.head_short_w.len() + self.head_short_b.len();
        for t in self.tensors() {
            off += t.len();
        }
        match head {
            Head::Long => off - long_len - short_len..off - short_len,
            Head::Short => off - short_len..off,
        }
    }

    /// Trainable mask for a phase: everything except the inactive head.
    pub fn trainable_mask(&self, active: Head) -> Vec<bool> {
        let mut mask = vec![true; self.n_params()];
        let frozen = match active {
            Head::Long => self.head_range(Head::Short),
            Head::Short => self.head_range(Head::Long),
        };
        for m in &mut mask[frozen] {
            *m = false;
        }
        mask
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != GRU_SCHEMA_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported network schema version {}",
                self.schema_version
            )));
        }
        if self.num_layers == 0 || self.cells.len() != self.num_layers {
            return Err(Error::ShapeMismatch("layer count mismatch".into()));
        }
        let width = self.input_width();
        for (i, cell) in self.cells.iter().enumerate() {
            let expect = if i == 0 { width } else { self.hidden_size };
            if cell.input_size != expect || cell.hidden_size != self.hidden_size {
                return Err(Error::ShapeMismatch(format!(
                    "cell {i} has input {} hidden {}, expected {} and {}",
                    cell.input_size, cell.hidden_size, expect, self.hidden_size
                )));
            }
        }
        let checks = [
            (self.proj_w.len(), self.numeric_proj * self.n_numeric, "proj_w"),
            (self.proj_b.len(), self.numeric_proj, "proj_b"),
            (
                self.time_embed.len(),
                STEPS_PER_DAY as usize * self.time_embed_dim,
                "time_embed",
            ),
            (
                self.id_embed.len(),
                self.turbine_ids.len() * self.id_embed_dim,
                "id_embed",
            ),
            (self.head_long_w.len(), self.out_long * self.hidden_size, "head_long_w"),
            (self.head_long_b.len(), self.out_long, "head_long_b"),
            (
                self.head_short_w.len(),
                self.out_short * self.hidden_size,
                "head_short_w",
            ),
            (self.head_short_b.len(), self.out_short, "head_short_b"),
        ];
        for (got, want, name) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        if self.turbine_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidData("turbine ids must be strictly ascending".into()));
        }
        Ok(())
    }
}

impl GruGradients {
    pub fn zeros_like(net: &GruNetwork) -> Self {
        GruGradients {
            proj_w: vec![0.0; net.proj_w.len()],
            proj_b: vec![0.0; net.proj_b.len()],
            time_embed: vec![0.0; net.time_embed.len()],
            id_embed: vec![0.0; net.id_embed.len()],
            cells: net
                .cells
                .iter()
                .map(|c| GruCell::zeros(c.input_size, c.hidden_size))
                .collect(),
            head_long_w: vec![0.0; net.head_long_w.len()],
            head_long_b: vec![0.0; net.head_long_b.len()],
            head_short_w: vec![0.0; net.head_short_w.len()],
            head_short_b: vec![0.0; net.head_short_b.len()],
        }
    }

    fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v: Vec<&Vec<f64>> =
            vec![&self.proj_w, &self.proj_b, &self.time_embed, &self.id_embed];
        for cell in &self.cells {
            v.extend(cell.tensors());
        }
        v.push(&self.head_long_w);
        v.push(&self.head_long_b);
        v.push(&self.head_short_w);
        v.push(&self.head_short_b);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = vec![
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.time_embed,
            &mut self.id_embed,
        ];
        for cell in &mut self.cells {
            v.extend(cell.tensors_mut());
        }
        v.push(&mut self.head_long_w);
        v.push(&mut self.head_long_b);
        v.push(&mut self.head_short_w);
        v.push(&mut self.head_short_b);
        v
    }

    /// Same canonical order as `GruNetwork::flatten`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for t in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.tensors_mut() {
                for v in t.iter_mut() {
                    *v *= s;
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GruConfig;
    use rand::SeedableRng;

    pub(crate) fn tiny_config() -> GruConfig {
        GruConfig {
            hidden_size: 4,
            num_layers: 2,
            numeric_proj: 5,
            time_embed: 2,
            id_embed: 2,
            dropout: 0.0,
            output_len: 7,
            finetune_len: 3,
            ..GruConfig::default()
        }
    }

    fn tiny_net(seed: u64) -> GruNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GruNetwork::new(&tiny_config(), &[2, 5, 9], &mut rng).unwrap()
    }

    fn tiny_window(net: &GruNetwork, seq_len: usize, seed: u64) -> PreparedWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PreparedWindow {
            x: (0..seq_len * net.n_numeric).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            seq_len,
            time_slots: (0..seq_len as u32).map(|t| t % STEPS_PER_DAY).collect(),
            id_row: 1,
            target: (0..net.out_long).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            target_mask: vec![true; net.out_long],
            origin: seq_len,
        }
    }

    #[test]
    fn init_is_seeded_and_in_range() {
        let a = tiny_net(3);
        let b = tiny_net(3);
        let c = tiny_net(4);
        assert_eq!(a, b);
        assert_ne!(a.flatten(), c.flatten());
        let bound = 1.0 / (a.hidden_size as f64).sqrt();
        assert!(a.flatten().iter().all(|v| v.abs() <= bound));
        assert!(a.proj_b.iter().all(|&v| v == 0.0));
        assert!(a.cells[0].b_in.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = tiny_net(11);
        let w = tiny_window(&net, 6, 12);
        let long = net.predict_scaled(&w, Head::Long).unwrap();
        let short = net.predict_scaled(&w, Head::Short).unwrap();
        assert_eq!(long.len(), 7);
        assert_eq!(short.len(), 3);
        assert_eq!(long, net.predict_scaled(&w, Head::Long).unwrap());
    }

    #[test]
    fn flatten_round_trip_and_head_ranges() {
        let mut net = tiny_net(21);
        let flat = net.flatten();
        assert_eq!(flat.len(), net.n_params());
        let mut other = tiny_net(22);
        other.unflatten(&flat).unwrap();
        assert_eq!(other.flatten(), flat);

        let long = net.head_range(Head::Long);
        let short = net.head_range(Head::Short);
        assert_eq!(long.end, short.start);
        assert_eq!(short.end, net.n_params());
        assert_eq!(long.len(), net.head_long_w.len() + net.head_long_b.len());
        // Mutating only the long head range leaves short-head outputs alone.
        let w = tiny_window(&net, 5, 23);
        let short_before = net.predict_scaled(&w, Head::Short).unwrap();
        let mut flat = net.flatten();
        for v in &mut flat[net.head_range(Head::Long)] {
            *v += 1.0;
        }
        net.unflatten(&flat).unwrap();
        assert_eq!(net.predict_scaled(&w, Head::Short).unwrap(), short_before);
        assert_ne!(net.predict_scaled(&w, Head::Long).unwrap().len(), 0);
    }

    #[test]
    fn trainable_mask_freezes_exactly_one_head() {
        let net = tiny_net(31);
        let mask = net.trainable_mask(Head::Long);
        let frozen: usize = mask.iter().filter(|m| !**m).count();
        assert_eq!(frozen, net.head_short_w.len() + net.head_short_b.len());
        assert!(net.head_range(Head::Short).all(|i| !mask[i]));
        let mask2 = net.trainable_mask(Head::Short);
        assert!(net.head_range(Head::Long).all(|i| !mask2[i]));
        assert!(net.head_range(Head::Short).all(|i| mask2[i]));
    }

    #[test]
    fn dropout_zeroes_some_paths_in_train_mode_only() {
        let mut cfg = tiny_config();
        cfg.dropout = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let net = GruNetwork::new(&cfg, &[1, 2], &mut rng).unwrap();
        let mut w = tiny_window(&net, 6, 42);
        w.id_row = 0;
        let eval = net.predict_scaled(&w, Head::Long).unwrap();
        let mut d1 = ChaCha8Rng::seed_from_u64(1);
        let (train1, _) = net.forward_cached(&w, Head::Long, Some(&mut d1)).unwrap();
        let mut d1b = ChaCha8Rng::seed_from_u64(1);
        let (train1b, _) = net.forward_cached(&w, Head::Long, Some(&mut d1b)).unwrap();
        let mut d2 = ChaCha8Rng::seed_from_u64(2);
        let (train2, _) = net.forward_cached(&w, Head::Long, Some(&mut d2)).unwrap();
        assert_eq!(train1, train1b, "same dropout seed reproduces outputs");
        assert_ne!(train1, train2, "different dropout draws change outputs");
        assert_ne!(train1, eval, "train mode differs from eval mode");
        assert_eq!(eval, net.predict_scaled(&w, Head::Long).unwrap());
    }

    #[test]
    fn unknown_turbine_has_no_embedding_row() {
        let net = tiny_net(51);
        assert!(net.id_row(5).unwrap_err().to_string().contains("5"));
        assert_eq!(net.id_row(9).unwrap(), 2);
    }

    #[test]
    fn validate_catches_truncated_tensor() {
        let mut net = tiny_net(61);
        net.validate().unwrap();
        net.head_long_b.pop();
        assert!(matches!(net.validate(), Err(Error::ShapeMismatch(_))));
    }
}
