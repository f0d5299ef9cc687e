//! Adam and the cosine-annealing learning-rate schedule.

use super::DeformConfig;

/// Adam moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Panics if the state, parameter and gradient lengths differ.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    cfg: &DeformConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    assert_eq!(params.len(), state.v.len());
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Cosine annealing from `lr0` at step 0 down to `eta_min` at `total`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize, eta_min: f64) -> f64 {
    debug_assert!(total >= 1 && step <= total);
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    eta_min + (lr0 - eta_min) * (1.0 + phase.cos()) / 2.0
}
