//! Single GRU cell: gate weights, one-step recurrence, and the matching
//! backward pass used by truncated-free full BPTT.

use serde::{Deserialize, Serialize};

use super::linalg::{add_assign, matvec, matvec_t_acc, outer_acc, sigmoid};
use crate::{Error, Result};

/// Gated recurrent unit cell. Weight matrices are row-major
/// `[hidden_size x input_size]` for the input side and
/// `[hidden_size x hidden_size]` for the recurrent side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_ir: Vec<f64>,
    pub w_iz: Vec<f64>,
    pub w_in: Vec<f64>,
    pub w_hr: Vec<f64>,
    pub w_hz: Vec<f64>,
    pub w_hn: Vec<f64>,
    pub b_ir: Vec<f64>,
    pub b_iz: Vec<f64>,
    pub b_in: Vec<f64>,
    pub b_hr: Vec<f64>,
    pub b_hz: Vec<f64>,
    pub b_hn: Vec<f64>,
}

/// Intermediate values for one cell step, kept so the backward pass can run
/// without recomputing the gates.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// W_hn h_prev + b_hn, needed because dn/dr multiplies by this term.
    pub hh_n: Vec<f64>,
}

impl GruCell {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let ih = vec![0.0; hidden_size * input_size];
        let hh = vec![0.0; hidden_size * hidden_size];
        let b = vec![0.0; hidden_size];
        GruCell {
            input_size,
            hidden_size,
            w_ir: ih.clone(),
            w_iz: ih.clone(),
            w_in: ih,
            w_hr: hh.clone(),
            w_hz: hh.clone(),
            w_hn: hh,
            b_ir: b.clone(),
            b_iz: b.clone(),
            b_in: b.clone(),
            b_hr: b.clone(),
            b_hz: b.clone(),
            b_hn: b,
        }
    }

    /// One recurrence step:
    ///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    ///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    ///   n = tanh(W_in x + b_in + r .* (W_hn h + b_hn))
    ///   h' = (1 - z) .* n + z .* h
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size || h_prev.len() != self.hidden_size {
            return Err(Error::ShapeMismatch(format!(
                "cell step expects input {} and hidden {}, got {} and {}",
                self.input_size,
                self.hidden_size,
                x.len(),
                h_prev.len()
            )));
        }
        let (h, _) = self.step_cached(x, h_prev);
        Ok(h)
    }

    pub(crate) fn step_cached(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, StepCache) {
        let hs = self.hidden_size;
        let is = self.input_size;
        let mut r = vec![0.0; hs];
        let mut z = vec![0.0; hs];
        let mut n = vec![0.0; hs];
        let mut tmp = vec![0.0; hs];
        let mut hh_n = vec![0.0; hs];

        matvec(&self.w_ir, hs, is, x, &mut r);
        add_assign(&mut r, &self.b_ir);
        matvec(&self.w_hr, hs, hs, h_prev, &mut tmp);
        add_assign(&mut r, &tmp);
        add_assign(&mut r, &self.b_hr);
        for v in r.iter_mut() {
            *v = sigmoid(*v);
        }

        matvec(&self.w_iz, hs, is, x, &mut z);
        add_assign(&mut z, &self.b_iz);
        matvec(&self.w_hz, hs, hs, h_prev, &mut tmp);
        add_assign(&mut z, &tmp);
        add_assign(&mut z, &self.b_hz);
        for v in z.iter_mut() {
            *v = sigmoid(*v);
        }

        matvec(&self.w_hn, hs, hs, h_prev, &mut hh_n);
        add_assign(&mut hh_n, &self.b_hn);
        matvec(&self.w_in, hs, is, x, &mut n);
        add_assign(&mut n, &self.b_in);
        for i in 0..hs {
            n[i] = (n[i] + r[i] * hh_n[i]).tanh();
        }

        let mut h = vec![0.0; hs];
        for i in 0..hs {
            h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            n: n.clone(),
            hh_n,
        };
        (h, cache)
    }

    /// Backward through one step. `dh` is the loss gradient at the step
    /// output; returns nothing, accumulating into `grads`, `dx` (gradient wrt
    /// the step input) and `dh_prev` (gradient wrt the incoming hidden state).
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        dh: &[f64],
        grads: &mut GruCell,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let hs = self.hidden_size;
        let is = self.input_size;
        let mut dn_pre = vec![0.0; hs];
        let mut dz_pre = vec![0.0; hs];
        let mut dr_pre = vec![0.0; hs];
        let mut d_hh_n = vec![0.0; hs];

        for i in 0..hs {
            let dz = dh[i] * (cache.h_prev[i] - cache.n[i]);
            let dn = dh[i] * (1.0 - cache.z[i]);
            dh_prev[i] += dh[i] * cache.z[i];

            let dpre_n = dn * (1.0 - cache.n[i] * cache.n[i]);
            dn_pre[i] = dpre_n;
            let dr = dpre_n * cache.hh_n[i];
            d_hh_n[i] = dpre_n * cache.r[i];
            dz_pre[i] = dz * cache.z[i] * (1.0 - cache.z[i]);
            dr_pre[i] = dr * cache.r[i] * (1.0 - cache.r[i]);
        }

        outer_acc(&mut grads.w_in, hs, is, &dn_pre, &cache.x);
        add_assign(&mut grads.b_in, &dn_pre);
        matvec_t_acc(&self.w_in, hs, is, &dn_pre, dx);

        outer_acc(&mut grads.w_hn, hs, hs, &d_hh_n, &cache.h_prev);
        add_assign(&mut grads.b_hn, &d_hh_n);
        matvec_t_acc(&self.w_hn, hs, hs, &d_hh_n, dh_prev);

        outer_acc(&mut grads.w_iz, hs, is, &dz_pre, &cache.x);
        add_assign(&mut grads.b_iz, &dz_pre);
        matvec_t_acc(&self.w_iz, hs, is, &dz_pre, dx);

        outer_acc(&mut grads.w_hz, hs, hs, &dz_pre, &cache.h_prev);
        add_assign(&mut grads.b_hz, &dz_pre);
        matvec_t_acc(&self.w_hz, hs, hs, &dz_pre, dh_prev);

        outer_acc(&mut grads.w_ir, hs, is, &dr_pre, &cache.x);
        add_assign(&mut grads.b_ir, &dr_pre);
        matvec_t_acc(&self.w_ir, hs, is, &dr_pre, dx);

        outer_acc(&mut grads.w_hr, hs, hs, &dr_pre, &cache.h_prev);
        add_assign(&mut grads.b_hr, &dr_pre);
        matvec_t_acc(&self.w_hr, hs, hs, &dr_pre, dh_prev);
    }

    /// Tensors in canonical order, used for flattening and serialization
    /// sanity checks. Order must match `tensors_mut`.
    pub(crate) fn tensors(&self) -> [&Vec<f64>; 12] {
        [
            &self.w_ir,
            &self.w_iz,
            &self.w_in,
            &self.w_hr,
            &self.w_hz,
            &self.w_hn,
            &self.b_ir,
            &self.b_iz,
            &self.b_in,
            &self.b_hr,
            &self.b_hz,
            &self.b_hn,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 12] {
        [
            &mut self.w_ir,
            &mut self.w_iz,
            &mut self.w_in,
            &mut self.w_hr,
            &mut self.w_hz,
            &mut self.w_hn,
            &mut self.b_ir,
            &mut self.b_iz,
            &mut self.b_in,
            &mut self.b_hr,
            &mut self.b_hz,
            &mut self.b_hn,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(input: usize, hidden: usize, seed: u64) -> GruCell {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cell = GruCell::zeros(input, hidden);
        for t in cell.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        cell
    }

    /// Scalar recomputation of the recurrence, independent of the vectorized
    /// implementation.
    fn scalar_step(cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hs = cell.hidden_size;
        let is = cell.input_size;
        let dot = |w: &[f64], row: usize, v: &[f64], cols: usize| -> f64 {
            (0..cols).map(|c| w[row * cols + c] * v[c]).sum()
        };
        let mut out = vec![0.0; hs];
        for i in 0..hs {
            let r = 1.0
                / (1.0
                    + (-(dot(&cell.w_ir, i, x, is)
                        + cell.b_ir[i]
                        + dot(&cell.w_hr, i, h, hs)
                        + cell.b_hr[i]))
                        .exp());
            let z = 1.0
                / (1.0
                    + (-(dot(&cell.w_iz, i, x, is)
                        + cell.b_iz[i]
                        + dot(&cell.w_hz, i, h, hs)
                        + cell.b_hz[i]))
                        .exp());
            let n = (dot(&cell.w_in, i, x, is)
                + cell.b_in[i]
                + r * (dot(&cell.w_hn, i, h, hs) + cell.b_hn[i]))
                .tanh();
            out[i] = (1.0 - z) * n + z * h[i];
        }
        out
    }

    #[test]
    fn step_matches_scalar_recomputation() {
        let cell = random_cell(4, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = cell.step(&x, &h).unwrap();
            let want = scalar_step(&cell, &x, &h);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_weights_halve_the_state_each_step() {
        // With all parameters zero: r = z = 0.5, n = 0, so h' = 0.5 h.
        let cell = GruCell::zeros(6, 5);
        let x = vec![3.0; 6];
        let mut h = vec![1.0, -1.0, 0.25, 8.0, -0.5];
        let h0 = h.clone();
        for t in 1..=20 {
            h = cell.step(&x, &h).unwrap();
            let scale = 0.5f64.powi(t);
            for (a, init) in h.iter().zip(&h0) {
                assert_eq!(*a, init * scale, "exact halving at step {t}");
            }
        }
    }

    #[test]
    fn step_rejects_shape_mismatch() {
        let cell = GruCell::zeros(4, 3);
        assert!(cell.step(&[0.0; 5], &[0.0; 3]).is_err());
        assert!(cell.step(&[0.0; 4], &[0.0; 2]).is_err());
    }

    #[test]
    fn state_stays_bounded_by_gate_structure() {
        // h' is a convex combination of n (in [-1, 1]) and h_prev, so from a
        // state inside [-1, 1] the trajectory never escapes it.
        let cell = random_cell(3, 4, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut h = vec![0.0; 4];
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            h = cell.step(&x, &h).unwrap();
            for v in &h {
                assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }
}
