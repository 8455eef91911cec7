use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::compute::Tensor;
use crate::model::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: parameters are multiplied by `1 − lr·weight_decay` before each update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adam moments for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Parameters whose gradient is `None` are
    /// left alone, weight decay included. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> Result<(), TrainingError> {
        self.step_scaled(params, grads, lr, &[])
    }

    /// Like [`Adam::step`], with parameter `i` using `lr · scales[i]`
    /// (missing entries count as 1).
    pub fn step_scaled(
        &mut self,
        params: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
        scales: &[f64],
    ) -> Result<(), TrainingError> {
        if grads.len() != params.len() {
            return Err(TrainingError::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            let Some(g) = g else { continue };
            if g.shape() != params.get(id).shape() {
                return Err(TrainingError::ShapeMismatch(format!(
                    "gradient of {} has shape {:?}, parameter has {:?}",
                    params.name(id),
                    g.shape(),
                    params.get(id).shape()
                )));
            }
            if !g.is_finite() {
                return Err(TrainingError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let i = id.index();
            let lr = lr * scales.get(i).copied().unwrap_or(1.0);
            let decay = 1.0 - lr * weight_decay;
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] = p[j] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
