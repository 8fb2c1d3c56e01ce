//! Dense `f64` tensors with reverse-mode differentiation.

pub mod check;
mod kernels;
mod tape;
mod tensor;

pub use tape::{BinaryOp, Gradients, Operand, Reduction, Tape, UnaryOp, Var, CLAMP_EPS};
pub use tensor::Tensor;
