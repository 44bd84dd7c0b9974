//! Tensors, `TNSR` files, reverse-mode differentiation, gradient checking and
//! the least-squares solver.

mod autodiff;
mod gradcheck;
mod real;
mod solver;
mod tensor;
pub mod tnsr;

pub use autodiff::{DiffGraph, Gradients, NodeId, Unary};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use real::Real;
pub use solver::{gauss_newton, numeric_jacobian, LeastSquaresProblem, Solution, SolverOptions, Termination};
pub use tensor::Tensor;
pub use tnsr::{load_tensor, read_tensor, save_tensor, write_tensor};
