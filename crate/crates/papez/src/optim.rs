//! AdamW with global gradient-norm clipping and per-epoch exponential
//! learning-rate decay.
//!
//! Defaults follow the training recipe used throughout the crate: lr 1e-4,
//! weight decay 1e-4, clip max-norm 1, decay factor 0.98 per epoch.
//! Moments are kept in f64 regardless of the model precision.

use std::collections::HashMap;

use crate::error::Result;
use crate::params::ParamSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub lr_decay_per_epoch: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            lr_decay_per_epoch: 0.98,
        }
    }
}

pub struct AdamW {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub epoch: u32,
    first_moment: HashMap<String, Vec<f64>>,
    second_moment: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Global L2 norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step_count: 0,
            epoch: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        }
    }

    /// Current learning rate: lr0 * decay^epoch, exact.
    pub fn lr(&self) -> f64 {
        self.config.lr * self.config.lr_decay_per_epoch.powi(self.epoch as i32)
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Apply one update from named gradients. Order of `grads` must match
    /// parameter registration order for determinism (as produced by
    /// [`ParamSet::grads`]).
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &[(String, Vec<T>)],
    ) -> Result<StepStats> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.lr();
        let c = &self.config;

        let mut norm_sq = 0.0f64;
        for (_, g) in grads {
            for &v in g {
                let v = v.to_f64();
                norm_sq += v * v;
            }
        }
        let grad_norm = norm_sq.sqrt();
        let clip_scale = if grad_norm > c.clip_norm {
            c.clip_norm / grad_norm
        } else {
            1.0
        };

        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        for (name, grad) in grads {
            let current: Vec<f64> = params
                .get(name)
                .expect("gradient for unknown parameter")
                .data()
                .iter()
                .map(|&x| x.to_f64())
                .collect();
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let mut updated = Vec::with_capacity(current.len());
            for i in 0..current.len() {
                let g = grad[i].to_f64() * clip_scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                // decoupled weight decay
                let mut w = current[i] * (1.0 - lr * c.weight_decay);
                w -= lr * m_hat / (v_hat.sqrt() + c.eps);
                updated.push(T::from_f64(w));
            }
            params.set_data(name, updated)?;
        }
        Ok(StepStats { grad_norm, lr })
    }
}
