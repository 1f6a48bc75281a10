//! Named parameter storage shared by the encoder, fusion block and heads.
//!
//! Parameters live outside any tape. Each forward pass binds them onto a
//! fresh [`Graph`] as leaves; after backward the trainer reads gradients
//! back out through the same binding. Names and order are fixed at
//! construction, which is what makes checkpoints and runs reproducible.

use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{Graph, Tensor, TensorId};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Flat, ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: String, tensor: Tensor) -> ParamId {
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Sum of element counts over all parameters.
    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Inserts every parameter as a leaf on `graph`, in store order.
    pub fn bind(&self, graph: &mut Graph, requires_grad: bool) -> Binding {
        Binding {
            ids: self
                .tensors
                .iter()
                .map(|t| graph.leaf(t.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Tape ids for one binding of a [`ParamStore`] onto a graph.
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn binding_roundtrips_values_and_grads() {
        let mut store = ParamStore::new();
        let p = store.add("w".to_string(), Tensor::vector(vec![2.0, 3.0]));
        let mut g = Graph::new();
        let binding = store.bind(&mut g, true);
        let id = binding.id(p);
        let sq = g.mul(id, id).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(id), &[4.0, 6.0]);
        assert_eq!(store.total_elements(), 2);
    }
}
