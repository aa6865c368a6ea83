//! Adam optimizer with exponential learning-rate decay.

use crate::error::{MinerError, Result};

/// Per-parameter-buffer Adam state. One instance per net, so pruning a net
/// drops its state without touching the others.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<f32>,
    v: Vec<f32>,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self::with_constants(param_count, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(param_count: usize, beta1: f32, beta2: f32, epsilon: f32) -> Self {
        Self {
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update with bias correction at learning rate `lr`.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, lr: f32) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(MinerError::ShapeMismatch(format!(
            "params {} / grads {} / state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Learning rate at `epoch` under exponential decay: `base_lr * gamma^epoch`.
pub fn decayed_lr(base_lr: f32, gamma: f32, epoch: usize) -> f32 {
    debug_assert!(gamma > 0.0 && gamma <= 1.0);
    base_lr * gamma.powi(epoch as i32)
}
