//! Adaptive-moment optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Step count plus first/second moment buffers, one per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    first: Vec<Array>,
    second: Vec<Array>,
}

impl AdamWState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array>) -> Self {
        let zeros: Vec<Array> = params.into_iter().map(|p| Array::zeros(p.shape())).collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One update: `p ← p·(1 - lr·wd)`, then the bias-corrected Adam step.
pub fn step(
    params: &mut [&mut Array],
    grads: &[Array],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv = *pv * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
