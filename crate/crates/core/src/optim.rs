//! Update rules: Riemannian SGD on the hyperboloid and Adam for the
//! Euclidean baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, LorentzPoint, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsgdConfig {
    pub learning_rate: f64,
    pub burn_in_epochs: usize,
    pub burn_in_factor: f64,
}

impl Default for RsgdConfig {
    fn default() -> Self {
        RsgdConfig {
            learning_rate: 0.1,
            burn_in_epochs: 25,
            burn_in_factor: 0.1,
        }
    }
}

impl RsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.burn_in_factor > 0.0 && self.burn_in_factor <= 1.0) {
            return Err(Error::Config(format!(
                "burn-in factor must lie in (0, 1], got {}",
                self.burn_in_factor
            )));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based): reduced during burn-in.
pub fn effective_lr(epoch: usize, cfg: &RsgdConfig) -> f64 {
    if epoch < cfg.burn_in_epochs {
        cfg.learning_rate * cfg.burn_in_factor
    } else {
        cfg.learning_rate
    }
}

/// Riemannian gradient at `x`: flip the sign of the time component (inverse
/// metric), then project onto the tangent space.
pub fn riemannian_grad(x: &LorentzPoint, g: &[f64]) -> Result<TangentVector> {
    if g.len() != x.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            actual: g.len(),
        });
    }
    let mut h = g.to_vec();
    h[0] = -h[0];
    geometry::tangent_project(x, &h)
}

/// One RSGD update `exp_x(-lr * grad f(x))`, followed by re-lifting `x_0`.
pub fn rsgd_step(x: &LorentzPoint, g: &[f64], lr: f64) -> Result<LorentzPoint> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if g.len() != x.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            actual: g.len(),
        });
    }
    let mut row = x.ambient().to_vec();
    if !rsgd_update_row(&mut row, g, lr) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(LorentzPoint::from_ambient(row).expect("re-lifted row is on the manifold"))
}

/// In-place RSGD update of one ambient row. Returns `false` and leaves the
/// row untouched when the gradient or the resulting point is non-finite.
pub(crate) fn rsgd_update_row(row: &mut [f64], g: &[f64], lr: f64) -> bool {
    if g.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let mut step = g.to_vec();
    step[0] = -step[0];
    geometry::project_in_place(row, &mut step);
    for s in &mut step {
        *s *= -lr;
    }
    let mut next = row.to_vec();
    geometry::exp_map_in_place(&mut next, &step);
    geometry::relift(&mut next);
    if next.iter().any(|c| !c.is_finite()) {
        return false;
    }
    row.copy_from_slice(&next);
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) || !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Config(format!("invalid Adam settings: {self:?}")));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid Adam settings: {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Dimension {
            expected: params.len(),
            actual: grads.len().min(state.m.len()).min(state.v.len()),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    adam_kernel(params, grads, &mut state.m, &mut state.v, state.step, cfg);
    Ok(())
}

/// Adam update of one parameter segment whose moments live in `m` and `v`;
/// `step` is the already incremented step count.
pub(crate) fn adam_kernel(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let update = (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        *p -= cfg.learning_rate * (update + cfg.weight_decay * *p);
    }
}
