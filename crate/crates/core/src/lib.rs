//! Periodic homogenization of scalar ODEs `u' = f(u/eps, t/eps, u, t)`.
//!
//! The crate evaluates oscillatory fields, integrates the `eps`-problem,
//! estimates the effective slope `fbar(u, t)` from the cell problem, runs
//! the homogenized scheme, and measures convergence rates.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod expr;
pub mod field;
pub mod homogenize;
pub mod integrator;
pub mod quadrature;
pub mod slope;
pub mod transport;
