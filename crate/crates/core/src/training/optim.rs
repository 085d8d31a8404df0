//! Decoupled-weight-decay Adam and the cosine learning-rate schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{shape_err, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// `lr_init - (lr_init - lr_min) * (1 - cos(pi * epoch / (epochs - 1))) / 2`,
/// which is exactly `lr_init` at epoch 0; constant `lr_init` for single-epoch
/// runs.
pub fn cosine_lr(epoch: usize, epochs: usize, lr_init: f64, lr_min: f64) -> f64 {
    if epochs <= 1 {
        return lr_init;
    }
    let t = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
    lr_init - 0.5 * (lr_init - lr_min) * (1.0 - (PI * t).cos())
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, steps: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter named in `grads`; all others are untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name).ok_or_else(|| crate::SscError::MissingParameter(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(shape_err(format!("gradient for {name}: {:?} vs {:?}", g.shape(), p.shape())));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let decay = 1.0 - lr * self.weight_decay;
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv *= decay;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
