//! Named parameter storage and the layers shared by both encoders.

mod layers;

pub use layers::{Conv1d, FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Float, Gradients, Graph, Result, Tensor, TensorError, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
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

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn total_numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies every tensor whose name exists in `other` with the same shape.
    /// Returns the names that were copied.
    pub fn load_matching(&mut self, other: &ParamStore<T>) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, t) in other.iter() {
            if let Some(id) = self.id(name) {
                if self.get(id).shape() == t.shape() {
                    self.tensors[id.0] = t.clone();
                    copied.push(name.to_string());
                }
            }
        }
        copied
    }

    /// Overwrites every parameter with the same-named tensor from `other`,
    /// failing on the first missing name or shape mismatch.
    pub fn load_strict(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .by_name(name)
                .ok_or_else(|| TensorError::shape("load", format!("missing tensor {name}")))?;
            if src.shape() != self.tensors[i].shape() {
                return Err(TensorError::shape(
                    "load",
                    format!(
                        "tensor {name}: expected {:?}, found {:?}",
                        self.tensors[i].shape(),
                        src.shape()
                    ),
                ));
            }
        }
        for (i, name) in self.names.iter().enumerate() {
            self.tensors[i] = other.by_name(name).expect("checked").clone();
        }
        Ok(())
    }
}

/// Parameters of a store recorded as leaves of one graph.
pub struct Bound<'g, T> {
    graph: &'g Graph<T>,
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Float> Bound<'g, T> {
    /// Records every parameter; `trainable` decides whether they collect gradients.
    pub fn bind(graph: &'g Graph<T>, store: &ParamStore<T>, trainable: bool) -> Self {
        let vars = store
            .tensors()
            .iter()
            .map(|t| graph.leaf(t.clone(), trainable))
            .collect();
        Bound { graph, vars }
    }

    /// Uses already-recorded variables, one per store entry in order.
    pub fn from_vars(graph: &'g Graph<T>, vars: &[Var<'g, T>]) -> Self {
        Bound {
            graph,
            vars: vars.to_vec(),
        }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn var(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }

    /// Gradients for every parameter, aligned with the store order.
    pub fn grads(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Seeded weight initialization helpers.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform<T: Float>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.gen_range(-bound..=bound)))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    /// `U(−1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in<T: Float>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        self.uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }

    pub fn normal<T: Float>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        use rand_distr::{Distribution, Normal};
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(self.rng))).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }
}
