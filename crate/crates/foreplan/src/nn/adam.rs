//! Adam optimizer over a [`ParamStore`].

use std::collections::BTreeMap;

use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::nn::NnError;

pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    fn moments_for(&mut self, name: &str, shape: &[usize]) -> &mut (Tensor, Tensor) {
        self.moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(shape.to_vec()), Tensor::zeros(shape.to_vec())))
    }

    pub fn moment_tensors(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.moments.iter().map(|(n, (m, v))| (n.as_str(), m, v))
    }

    pub fn set_moments(&mut self, name: &str, m: Tensor, v: Tensor) {
        self.moments.insert(name.to_string(), (m, v));
    }
}

/// One bias-corrected Adam update over every parameter. Fails with the
/// offending parameter name if any gradient entry is non-finite.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<(), NnError> {
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in &names {
        if !store.grad(name).is_finite() {
            return Err(NnError::NonFiniteGrad(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (state.beta1 as f64).powf(t);
    let bc2 = 1.0 - (state.beta2 as f64).powf(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for name in &names {
        let grad = store.grad(name).clone();
        let (m, v) = state.moments_for(name, &grad.shape);
        for i in 0..grad.data.len() {
            let g = grad.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * g;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * g * g;
        }
        let (m, v) = (m.clone(), v.clone());
        let value = store.value_mut(name);
        for i in 0..value.data.len() {
            let mhat = m.data[i] as f64 / bc1;
            let vhat = v.data[i] as f64 / bc2;
            value.data[i] -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
        }
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f32) -> f32 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(max_norm / norm);
    }
    norm
}
