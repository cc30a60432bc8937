use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW with a cosine learning-rate schedule and finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: usize,
    pub fd_h: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            lr_start: 2e-3,
            lr_end: 1e-4,
            total_steps: 2000,
            fd_h: 1e-4,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Argument(format!(
                "betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.fd_h > 0.0) {
            return Err(Error::Argument(
                "eps and fd_h must be positive, weight decay non-negative".into(),
            ));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::Argument(format!(
                "need 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        Ok(())
    }

    /// `lr_end + (lr_start - lr_end)(1 + cos(pi k / total)) / 2`.
    pub fn lr(&self, iteration: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr_start;
        }
        let frac = iteration.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay on the
/// coordinates flagged in `decay`.
pub fn optimizer_step(
    state: &AdamState,
    grad: &[f64],
    theta: &[f64],
    iteration: usize,
    config: &OptimConfig,
    decay: &[bool],
) -> Result<(AdamState, Vec<f64>)> {
    let n = theta.len();
    for (field, len) in [
        ("grad", grad.len()),
        ("decay", decay.len()),
        ("m", state.m.len()),
        ("v", state.v.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                field: field.into(),
                expected: n,
                found: len,
            });
        }
    }
    let k = (iteration + 1) as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let (c1, c2) = (1.0 - b1.powi(k), 1.0 - b2.powi(k));
    let lr = config.lr(iteration);
    let mut next = AdamState::new(n);
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        next.m[j] = b1 * state.m[j] + (1.0 - b1) * grad[j];
        next.v[j] = b2 * state.v[j] + (1.0 - b2) * grad[j] * grad[j];
        let step = (next.m[j] / c1) / ((next.v[j] / c2).sqrt() + config.eps);
        let wd = if decay[j] { config.weight_decay * theta[j] } else { 0.0 };
        out.push(theta[j] - lr * (step + wd));
    }
    Ok((next, out))
}
