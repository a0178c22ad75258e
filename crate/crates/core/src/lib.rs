//! Minimization of smooth nonconvex functions by regularized tensor models
//! of order `p`, where the top-order derivative is approximated by forward
//! finite differences of order-`(p-1)` derivatives and each approximation is
//! reused lazily for up to `m` consecutive model steps before being rebuilt.
//!
//! The crate is organized bottom-up:
//!
//! * [`multilinear`]: dense symmetric multilinear forms over `R^n` (orders
//!   1..=3) and rank-one-sum tensors, with contraction, symmetrization, and
//!   operator-norm estimation.
//! * [`problems`]: objective oracles returning derivatives up to a declared
//!   order, with per-call accounting, plus a small built-in test suite.
//! * [`fdtensor`]: the finite-difference tensor construction and the
//!   `(sigma, h)` schedule tied to the current Lipschitz estimate.
//! * [`model`]: the regularized approximate Taylor model, its gradient, and
//!   the two acceptance predicates for inexact minimizers.
//! * [`subsolver`]: order-specific strategies producing a point that
//!   satisfies both acceptance predicates.
//! * [`lazy`]: up to `m` inexact steps reusing one tensor, with three-way
//!   termination (`success`, `solution`, `halt`).
//! * [`driver`]: the adaptive outer loop doubling/halving the Lipschitz
//!   estimate, with full run reporting.

pub mod driver;
mod error;
pub mod fdtensor;
pub mod lazy;
pub mod model;
pub mod multilinear;
pub mod problems;
pub mod subsolver;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Exact factorials as `f64` for small arguments; the model and the
/// schedules never need more than `(p+1)! = 24`.
pub(crate) fn factorial(k: usize) -> f64 {
    const TABLE: [f64; 8] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0];
    TABLE[k]
}
