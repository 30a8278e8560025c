//! Adaptive-stepsize gradient methods for smooth nonconvex objectives.
//!
//! The crate is split into five layers:
//!
//! - [`problems`]: objectives with hand-coded gradients, synthetic least-squares
//!   generation and stochastic gradient oracles.
//! - [`optimizers`]: pure step rules (AdaGrad-Norm, AdaGrad-Coordinate, SGD,
//!   WNGrad, line-search GD, AdaGrad-Norm with momentum) and the [`run`] driver.
//! - [`theory`]: closed-form convergence bounds and brute-force lemma checkers.
//! - [`oracles`]: independent verification machinery (finite differences,
//!   subset enumeration, Jacobi eigensolver, Monte Carlo variance).
//! - [`harness`]: b0 sweeps, CSV emission and summaries.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod oracles;
pub mod problems;
pub mod theory;

pub use error::{Error, Result};
pub use optimizers::{run, AlgorithmConfig, AlgorithmKind, RunOptions, RunTrace, TraceStatus};
pub use problems::{GradientOracle, LeastSquaresProblem, Objective, OracleKind, Problem};
