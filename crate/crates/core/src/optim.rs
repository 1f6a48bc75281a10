//! AdamW with decoupled weight decay, plus the cosine learning-rate
//! schedule.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment state aligned with a parameter store.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> AdamW {
        AdamW {
            cfg,
            m: store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// One update with the given learning rate. Weight decay is decoupled:
    /// parameters shrink by lr * wd * param independently of the
    /// bias-corrected moment update.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.cfg.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.cfg.beta2, self.t as f64);
        for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = &grads[i];
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                *p -= lr * self.cfg.weight_decay * *p;
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + self.cfg.epsilon);
            }
        }
    }
}

/// Cosine annealing from `lr_start` down to `lr_min` over `total_steps`.
/// Endpoints are exact: step 0 returns `lr_start`, step >= total returns
/// `lr_min`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_min: f64) -> f64 {
    debug_assert!(total_steps >= 1);
    if step == 0 {
        return lr_start;
    }
    if step >= total_steps {
        return lr_min;
    }
    let progress = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_start - lr_min) * (1.0 + libm::cos(core::f64::consts::PI * progress))
}
