//! Nonlinear acceleration of optimization algorithms.

pub mod bench;
pub mod chebyshev;
pub mod drivers;
pub mod extrapolate;
pub mod linalg;
pub mod numrange;
pub mod online;
pub mod problems;
