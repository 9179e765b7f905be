use serde::{Deserialize, Serialize};

use super::graph::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.0.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads.0[k], &mut state.m[k], &mut state.v[k]);
        for i in 0..p.data.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Triangular cyclic learning rate whose peak decays geometrically per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicLr {
    pub lr_min: f64,
    pub lr_max: f64,
    /// Iterations per full cycle (min → peak → min).
    pub cycle_length: u64,
    pub decay: f64,
}

impl CyclicLr {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.cycle_length == 0 || !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Config("cycle_length must be positive and decay in [0, 1]".into()));
        }
        Ok(())
    }

    /// Peak rate of cycle `k`.
    pub fn peak(&self, k: u64) -> f64 {
        self.lr_min + (self.lr_max - self.lr_min) * self.decay.powi(k.min(i32::MAX as u64) as i32)
    }

    pub fn at(&self, iteration: u64) -> f64 {
        let k = iteration / self.cycle_length;
        let pos = (iteration % self.cycle_length) as f64 / self.cycle_length as f64;
        let tri = 1.0 - (2.0 * pos - 1.0).abs();
        let lr = self.lr_min + (self.peak(k) - self.lr_min) * tri;
        lr.clamp(self.lr_min, self.lr_max)
    }
}

pub fn cyclic_lr(iteration: u64, cfg: &CyclicLr) -> f64 {
    cfg.at(iteration)
}
