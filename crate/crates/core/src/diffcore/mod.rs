//! Minimal differentiable compute core: dense `f64` tensors, an eager
//! append-only tape with reverse-mode gradients, seeded randomness, and a
//! finite-difference gradient checker.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_leaves, GradCheckReport};
pub use rng::{Rng, RngState};
pub use tape::{softmax_values, Gradients, Op, Tape, TapeNode, UnaryKind, Var};
pub use tensor::Tensor;
