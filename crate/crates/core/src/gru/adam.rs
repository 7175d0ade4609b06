//! Adam with bias correction over a flat parameter vector. A boolean mask
//! freezes parameter ranges (the inactive forecast head) completely: frozen
//! indices get no moment updates and no parameter change.

use serde::{Deserialize, Serialize};

use crate::config::GruConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: &GruConfig) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            learning_rate: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
        }
    }

    /// One update step. `mask`, when present, marks trainable indices.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(mask) = mask {
            if mask.len() != self.m.len() {
                return Err(Error::ShapeMismatch(format!(
                    "mask has {} entries, expected {}",
                    mask.len(),
                    self.m.len()
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if let Some(mask) = mask {
                if !mask[i] {
                    continue;
                }
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_lr(lr: f64) -> GruConfig {
        GruConfig {
            learning_rate: lr,
            ..GruConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With bias correction, the first step is lr * g / (|g| + eps).
        let mut adam = AdamState::new(2, &cfg_lr(0.1));
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[0.5, -3.0], None).unwrap();
        assert!((p[0] - (1.0 - 0.1)).abs() < 1e-8, "{}", p[0]);
        assert!((p[1] - (-1.0 + 0.1)).abs() < 1e-8, "{}", p[1]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // f(p) = (p - 3)^2, gradient 2(p - 3).
        let mut adam = AdamState::new(1, &cfg_lr(0.05));
        let mut p = [0.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 3.0);
            adam.step(&mut p, &[g], None).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn masked_indices_are_fully_frozen() {
        let mut adam = AdamState::new(3, &cfg_lr(0.1));
        let mut p = [1.0, 2.0, 3.0];
        let mask = [true, false, true];
        for _ in 0..5 {
            adam.step(&mut p, &[1.0, 1.0, 1.0], Some(&mask)).unwrap();
        }
        assert_eq!(p[1], 2.0);
        assert_eq!(adam.m[1], 0.0);
        assert_eq!(adam.v[1], 0.0);
        assert!(p[0] < 1.0 && p[2] < 3.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = AdamState::new(2, &cfg_lr(0.1));
        let mut p = [0.0; 3];
        assert!(adam.step(&mut p, &[0.0; 3], None).is_err());
        let mut p2 = [0.0; 2];
        assert!(adam.step(&mut p2, &[0.0; 2], Some(&[true])).is_err());
    }
}
