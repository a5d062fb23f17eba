//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor) values.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};

#[cfg(test)]
mod tests;
