use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};

/// Named parameter tensors in a fixed order; the order is the index used by
/// [`ParamStore::load`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a trainable leaf.
    pub fn load(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Records every tensor as a constant (evaluation).
    pub fn constants(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Replaces all tensors, keeping names; shapes must match.
    pub fn replace(&mut self, tensors: Vec<Tensor>) -> Result<(), crate::tensor::ShapeError> {
        if tensors.len() != self.tensors.len() {
            return Err(crate::tensor::ShapeError::new("replace", &[self.tensors.len()], &[tensors.len()]));
        }
        for (old, new) in self.tensors.iter().zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(crate::tensor::ShapeError::new("replace", old.shape(), new.shape()));
            }
        }
        self.tensors = tensors;
        Ok(())
    }
}

/// Parameter initializers.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform in `[-1/sqrt(d), 1/sqrt(d)]` where `d` is the row width.
    pub fn embedding(&mut self, rows: usize, dim: usize) -> Tensor {
        let bound = 1.0 / (dim as f64).sqrt();
        let data = (0..rows * dim).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Tensor::new(&[rows, dim], data).expect("shape")
    }

    /// Normal with variance `2 / (fan_in + fan_out)`.
    pub fn xavier(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(self.rng)).collect();
        Tensor::new(&[fan_in, fan_out], data).expect("shape")
    }
}
