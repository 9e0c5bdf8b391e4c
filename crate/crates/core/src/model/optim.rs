//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters. Learning rate and weight decay defaults follow
/// the training recipe; the moment coefficients and epsilon are the
/// optimizer's standard defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-4, weight_decay: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One AdamW update of a tensor in place. `step` is the 1-based update count
/// used for bias correction. Weight decay is decoupled: it subtracts
/// `lr * weight_decay * theta` directly, using the pre-update value, and is
/// skipped when `decay` is false.
///
/// With `freeze_zero_grad`, entries whose gradient is exactly zero are left
/// completely untouched (no moment update either). Localization masking
/// zeroes the gradients of all but one activation unit; without the freeze,
/// first-moment momentum from earlier steps would keep moving masked units.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamWConfig,
    decay: bool,
    freeze_zero_grad: bool,
) {
    debug_assert_eq!(theta.len(), grad.len());
    debug_assert_eq!(theta.len(), m.len());
    debug_assert_eq!(theta.len(), v.len());
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        if freeze_zero_grad && g == 0.0 {
            continue;
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let mut update = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        if decay {
            update += cfg.lr * cfg.weight_decay * theta[i];
        }
        theta[i] -= update;
    }
}
