//! Numerical toolkit for two-dimensional ergodic singular control problems
//! with a one-dimensional factor.
//!
//! The pipeline solves the Dynkin game whose value `U` is the x-derivative
//! of a pseudo-potential, reads off the reflection band `a₊(y) < x < a₋(y)`,
//! builds the value profile `λ(y)` and the ergodic value `λ*`, and checks
//! optimality by simulating the reflected inventory.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynkin_solver;
pub mod error;
pub mod free_boundary;
pub mod grid_operator;
pub mod model;
pub mod pipeline;
pub mod simulate;
pub mod stationary;
pub mod value_profile;

pub use error::{Error, Result};
