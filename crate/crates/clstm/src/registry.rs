//! Named trainable parameters and their gradient buffers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to one registered parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered registry of named parameter tensors. Embedding tensors carry a
/// flag so they can be excluded from parameter counts and from L2 decay.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    embedding: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor, embedding: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name: {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.embedding.push(embedding);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_embedding(&self, id: ParamId) -> bool {
        self.embedding[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .zip(&self.embedding)
            .map(|((n, t), &e)| (n.as_str(), t, e))
    }

    /// Total element count, optionally excluding embedding-flagged tensors.
    pub fn count_params(&self, include_embeddings: bool) -> usize {
        self.iter()
            .filter(|(_, _, emb)| include_embeddings || !emb)
            .map(|(_, t, _)| t.len())
            .sum()
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.tensors.clone()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.tensors.len());
        self.tensors.clone_from_slice(snapshot);
    }
}

/// Gradient buffers parallel to a registry.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(registry: &ParamRegistry) -> Self {
        GradStore {
            grads: registry
                .iter()
                .map(|(_, t, _)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Disjoint mutable borrows of two gradient tensors.
    pub fn get2_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.grads.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.grads.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.grads.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm over all buffers.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &GradStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (g, o) in self.grads.iter_mut().zip(&other.grads) {
            crate::tensor::axpy(g.data_mut(), 1.0, o.data());
        }
    }
}
