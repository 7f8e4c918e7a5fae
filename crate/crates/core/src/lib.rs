//! Dynamical systems method (DSM) for regularized nonlinear equations
//! `F(u) + εu = 0` on finite-dimensional normed spaces.
//!
//! The solution is obtained as the limit `w(∞)` of the flow
//! `ẇ = -(F'(w) + εI)⁻¹ (F(w) + εw)`, along which the residual decays exactly
//! like `e^(-t)`. Near a known root `y` the same equation is also solved by a
//! fixed-point iteration on a ball whose radius and contraction factor are
//! computed explicitly. The crate ships diagnostics that check the decay law,
//! the a-priori trajectory bounds, the contraction construction and the
//! `O(ε^k)` convergence rate on a suite of built-in problems.

pub mod contraction;
pub mod error;
pub mod fit;
pub mod flow;
pub mod operator;
pub mod problems;
pub mod regpath;
pub mod report;
pub mod space;

pub use error::{DsmError, ErrorClass, Result};
pub use operator::{ProblemOp, RegParams};
pub use space::{Matrix, NormKind, Vector};
