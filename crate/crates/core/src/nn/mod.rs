//! Layers with explicit forward and backward passes.
//!
//! Nothing here builds a graph: callers keep whatever forward values the
//! backward pass needs and hand them back in. Trainable weights live in
//! [`Param`]s, which carry their own gradient accumulator.

mod conv;
mod ops;
mod pad;

pub use conv::Conv2d;
pub use ops::*;
pub use pad::{pad2d, pad2d_backward, source_index, PadMode};

use rand::Rng;

use crate::tensor::Scalar;

/// A trainable array and its gradient. The gradient buffer stays empty
/// until [`Param::ensure_grad`] is called, so frozen and inference-only
/// models carry no extra memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        Param {
            value,
            grad: Vec::new(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Param::new(vec![T::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn tracks_grad(&self) -> bool {
        self.grad.len() == self.value.len() && !self.value.is_empty()
    }

    pub fn ensure_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = T::zero();
        }
    }

    pub fn drop_grad(&mut self) {
        self.grad = Vec::new();
    }

    /// Uniform in `[-bound, bound]`.
    pub fn fill_uniform<R: Rng>(&mut self, bound: f64, rng: &mut R) {
        for v in &mut self.value {
            *v = T::lit(rng.gen_range(-bound..=bound));
        }
    }
}
