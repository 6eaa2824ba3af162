//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{leaky_relu, softplus, Elementwise, Gradients, Tape, Var};
pub use tensor::Tensor;
