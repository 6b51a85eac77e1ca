//! AdamW with decoupled weight decay.
//!
//! ```text
//! p ← p · (1 − lr·λ)
//! m ← β₁ m + (1 − β₁) g
//! v ← β₂ v + (1 − β₂) g²
//! p ← p − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! ```

use serde::{Deserialize, Serialize};

use super::tape::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One update of every tensor in `params` from the matching entry of `grads`.
#[allow(clippy::needless_range_loop)]
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = params
        .iter()
        .zip(grads)
        .position(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::Contract(format!(
            "gradient {i} has shape {:?}, parameter has {:?}",
            grads[i].shape(),
            params[i].shape()
        )));
    }
    if state.m.is_empty() {
        state.m = grads
            .iter()
            .map(|g| Tensor::zeros(g.rows(), g.cols()))
            .collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len()
        || state
            .m
            .iter()
            .zip(grads)
            .any(|(m, g)| m.shape() != g.shape())
    {
        return Err(Error::Contract(
            "optimizer state does not match parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            pd[i] = pd[i] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Convenience wrapper updating every tensor of a store in registration order.
pub fn adamw_step_store(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    let mut refs: Vec<&mut Tensor> = store.tensors_mut().collect();
    adamw_step(&mut refs, grads, state, cfg)
}
