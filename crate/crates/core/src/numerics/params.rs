use std::collections::HashMap;

use rand::Rng;

use super::{NumericsError, Tensor};
use crate::scalar::Scalar;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept in insertion order so that checkpoints and
/// optimizer state are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a tensor under `name`. Panics on a duplicate name, which is
    /// always a model-construction bug.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    /// Uniform init in `[-scale, scale]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-scale..=scale))).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar coordinates.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces the value of an existing parameter, checking its shape.
    pub fn assign(&mut self, name: &str, tensor: Tensor<T>) -> Result<(), NumericsError> {
        let id = self
            .id(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        let slot = &mut self.tensors[id.0];
        if slot.shape() != tensor.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "assign",
                left: slot.shape().to_vec(),
                right: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]. Parameters that
/// did not take part in the loss hold zeros of the right shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().map(Tensor::squared_norm).sum::<T>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.scale_assign(s);
            }
        }
        norm
    }
}
