use rand::Rng as _;

use crate::autodiff::{Array, Tape, Var};
use crate::rng::Rng;

/// Flat, ordered collection of named trainable arrays.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: String, array: Array) -> usize {
        self.names.push(name);
        self.arrays.push(array);
        self.arrays.len() - 1
    }

    /// Weight matrix `[rows × cols]` drawn from `U(−1/√cols, 1/√cols)`.
    pub(crate) fn push_uniform(&mut self, name: String, shape: &[usize], fan_in: usize, rng: &mut Rng) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(name, Array::new(shape.to_vec(), data).expect("positive shape"))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.arrays[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.arrays[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    /// Records every array as a trainable leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.arrays.iter().map(|a| tape.param(a.clone())).collect()
    }

    /// Collects the gradient of every bound array, zeros where unreachable.
    pub fn grads(&self, tape: &Tape, vars: &[Var]) -> Vec<Array> {
        vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }
}
