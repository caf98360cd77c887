//! Adam, gradient-norm clipping and the step learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamRegistry};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates taken so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// One bias-corrected update of every trainable entry from its `grad`.
    /// Parameters and moments are rounded to `f32` afterwards.
    pub fn step(&mut self, reg: &mut ParamRegistry, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, e) in reg.iter_mut() {
            if e.kind != ParamKind::Trainable {
                continue;
            }
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(e.value.shape()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(e.value.shape()));
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (w, g)) in e.value.data_mut().iter_mut().zip(e.grad.data()).enumerate() {
                m[i] = (self.beta1 * m[i] + (1.0 - self.beta1) * g) as f32 as f64;
                v[i] = (self.beta2 * v[i] + (1.0 - self.beta2) * g * g) as f32 as f64;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w = (*w - lr * mh / (vh.sqrt() + self.eps)) as f32 as f64;
            }
        }
    }
}

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(reg: &mut ParamRegistry, max_norm: f64) -> Result<f64> {
    let norm = reg.grad_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let c = max_norm / norm;
        for (_, e) in reg.iter_mut() {
            if e.kind == ParamKind::Trainable {
                e.grad.data_mut().iter_mut().for_each(|g| *g *= c);
            }
        }
    }
    Ok(norm)
}

/// Learning rate multiplied by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepLr {
    /// Rate in effect during `epoch` (1-based).
    pub fn at(&self, epoch: usize) -> f64 {
        let k = (epoch.max(1) - 1) / self.every.max(1);
        self.base * self.factor.powi(k as i32)
    }
}
