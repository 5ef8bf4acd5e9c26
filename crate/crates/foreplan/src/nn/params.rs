//! Named parameter storage with paired gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::nn::tensor::Tensor;
use crate::nn::NnError;

#[derive(Debug)]
struct Param {
    value: Tensor,
    grad: Tensor,
}

/// Named tensors with gradient buffers of identical shape. Iteration order
/// is the sorted name order, which fixes checkpoint layout and optimizer
/// update order.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        if self.entries.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape.clone());
        self.entries.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown param {name}")).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown param {name}"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown param {name}")).grad
    }

    pub fn add_grad(&mut self, name: &str, delta: &Tensor) {
        let p = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown param {name}"));
        assert_eq!(p.grad.shape, delta.shape, "grad shape mismatch for {name}");
        for (g, d) in p.grad.data.iter_mut().zip(&delta.data) {
            *g += *d;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, c: f32) {
        for p in self.entries.values_mut() {
            p.grad.data.iter_mut().for_each(|g| *g *= c);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f32 {
        let mut acc = 0.0f64;
        for p in self.entries.values() {
            for &g in &p.grad.data {
                acc += g as f64 * g as f64;
            }
        }
        acc.sqrt() as f32
    }

    pub fn iter_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), &p.value))
    }
}

/// Parameter construction helper: fan-in scaled uniform weights, zeros or
/// constants for the rest, all draws from one seeded stream in registration
/// order.
pub struct ParamInit<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<'a, R: Rng> ParamInit<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self { store, rng }
    }

    /// Weight matrix `[fan_in, fan_out]`, entries uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let data: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-bound..=bound))
            .collect();
        self.store
            .insert(name, Tensor { shape: vec![fan_in, fan_out], data })
            .expect("param registered twice");
    }

    /// Embedding-style table `[rows, d]` with the same fan-in rule over `d`.
    pub fn table(&mut self, name: &str, rows: usize, d: usize) {
        let bound = 1.0 / (d as f32).sqrt();
        let data: Vec<f32> = (0..rows * d)
            .map(|_| self.rng.gen_range(-bound..=bound))
            .collect();
        self.store
            .insert(name, Tensor { shape: vec![rows, d], data })
            .expect("param registered twice");
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) {
        self.store
            .insert(name, Tensor::zeros(shape))
            .expect("param registered twice");
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) {
        self.store
            .insert(name, Tensor::full(shape, 1.0))
            .expect("param registered twice");
    }
}
