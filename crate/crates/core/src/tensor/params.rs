use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, each paired with a gradient accumulator of the same shape.
///
/// Iteration order is registration order, which is also the order parameters
/// are written to checkpoints.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    /// Mutable access to a parameter and its gradient at once.
    pub fn pair_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &mut Tensor<T>) {
        (&mut self.values[id.0], &mut self.grads[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    /// Scales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if max_norm > 0.0 && norm > max_norm {
            let s = T::of(max_norm / norm);
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// Same names and shapes, values converted to another precision, gradients zeroed.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            index: self.index.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(|g| Tensor::zeros(g.shape())).collect(),
        }
    }
}
