//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation; [`Graph::backward`] sweeps the
//! record in reverse and returns [`Gradients`] for all leaves created with
//! [`Graph::param`]. [`grad_check`] compares those gradients against central
//! finite differences.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, LeafReport, DENOMINATOR_FLOOR, FD_STEP};
pub use graph::{Gradients, Graph, Var, CAUSAL_FILL};
pub use tensor::Tensor;
