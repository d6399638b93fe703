//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

/// A named trainable array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}
