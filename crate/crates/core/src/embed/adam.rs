use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingModel};
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every model parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(model: &EmbeddingModel, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            step: 0,
            config,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// True when the accumulators mirror the model's parameter shapes.
    pub fn matches(&self, model: &EmbeddingModel) -> bool {
        self.m.len() == model.params().len()
            && self.v.len() == model.params().len()
            && model
                .params()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step(
    model: &mut EmbeddingModel,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), EmbedError> {
    let n = model.params().len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(EmbedError::GradCount {
            expected: n,
            found: grads.len(),
        });
    }
    for (index, (p, g)) in model.params().iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(EmbedError::GradShape {
                index,
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (k, param) in model.params_mut().iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state.v[k].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (state.m[k].data(), state.v[k].data());
        for (i, w) in param.data_mut().iter_mut().enumerate() {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
