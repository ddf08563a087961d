//! Adam with a linear-warmup, exponential-decay learning rate schedule.

use crate::error::{FattnError, Result};
use crate::tensorcore::params::ParamStore;
use crate::tensorcore::tensor::Tensor;

/// Learning rate: linear ramp to `peak_lr` over `warmup_steps`, then
/// continuous exponential decay by `decay_rate` every `decay_every` steps.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    pub decay_every: u64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.peak_lr <= 0.0 || self.warmup_steps == 0 || self.decay_every == 0 {
            return Err(FattnError::InvalidConfig(
                "schedule needs peak_lr > 0, warmup_steps >= 1, decay_every >= 1".into(),
            ));
        }
        if !(0.0 < self.decay_rate && self.decay_rate <= 1.0) {
            return Err(FattnError::InvalidConfig("decay_rate must be in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn lr_at(sched: &LrSchedule, t: u64) -> f64 {
    if t <= sched.warmup_steps {
        sched.peak_lr * t as f64 / sched.warmup_steps as f64
    } else {
        let span = (t - sched.warmup_steps) as f64 / sched.decay_every as f64;
        sched.peak_lr * sched.decay_rate.powf(span)
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            m: store.iter().map(|e| Tensor::zeros_like(&e.value)).collect(),
            v: store.iter().map(|e| Tensor::zeros_like(&e.value)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every entry, in registration
/// order. Gradients are consumed (zeroed) on success.
pub fn adam_step(store: &mut ParamStore, state: &mut OptState, sched: &LrSchedule) -> Result<()> {
    let t = state.t + 1;
    let lr = lr_at(sched, t);
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);

    for (idx, entry) in store.iter_mut().enumerate() {
        if !entry.grad.is_finite() {
            return Err(FattnError::NonFinite(format!("gradient for {}", entry.name)));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..entry.value.len() {
            let g = entry.grad.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * g;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            entry.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + state.epsilon);
        }
        entry.grad = Tensor::zeros_like(&entry.value);
    }
    state.t = t;
    Ok(())
}
