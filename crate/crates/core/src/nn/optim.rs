use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ParamGradients, Params};
use crate::error::{ensure_dim, Error, Result};

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &Params) -> Self {
        let n = params.as_slice().len();
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut OptimizerState, params: &mut Params, grads: &ParamGradients, lr: f64) -> Result<()> {
    let n = params.as_slice().len();
    ensure_dim("adam moments", n, state.m.len())?;
    ensure_dim("adam gradients", n, grads.data.len())?;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(i) = grads.data.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads.data[i])));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let step_size = (lr / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let eps = state.eps as f32;
    let (b1f, b2f) = (b1 as f32, b2 as f32);
    for (((p, m), v), &g) in params
        .as_mut_slice()
        .iter_mut()
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
        .zip(&grads.data)
    {
        *m = b1f * *m + (1.0 - b1f) * g;
        *v = b2f * *v + (1.0 - b2f) * g * g;
        *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
    }
    Ok(())
}

/// Linear warm-up from 0 to `peak`, then cosine decay to 0 at `total`.
pub fn cosine_lr(step: u64, warmup: u64, total: u64, peak: f64) -> Result<f64> {
    if warmup > total {
        return Err(Error::Config(format!("warmup {warmup} exceeds total {total}")));
    }
    let step = step.min(total);
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(peak);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(0.5 * peak * (1.0 + (PI * progress).cos()))
}
