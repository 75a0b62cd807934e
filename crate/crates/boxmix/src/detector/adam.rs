//! Adam with decoupled weight decay and a per-epoch learning-rate factor.

use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use crate::error::Result;
use crate::invalid_arg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            step: 0,
            m: ParamSet::zeros_like(params),
            v: ParamSet::zeros_like(params),
        }
    }
}

/// One optimizer step. `lr_scale` carries the epoch decay schedule; the decay
/// term is decoupled from the adaptive update.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    hyper: &AdamHyper,
    lr_scale: f64,
) -> Result<()> {
    if !params.congruent(grads) || !params.congruent(&state.m) {
        return Err(invalid_arg!("optimizer inputs are not shape-congruent"));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = hyper.lr * lr_scale;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for b in 0..params.blocks.len() {
        let p = &mut params.blocks[b].data;
        let g = &grads.blocks[b].data;
        let m = &mut state.m.blocks[b].data;
        let v = &mut state.v.blocks[b].data;
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * p[i]);
        }
    }
    Ok(())
}
