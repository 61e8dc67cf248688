//! Pontryagin extremal-flow analysis for control-affine optimal control
//! problems: backward extremals, variational equations, conjugate points,
//! multiplicity of optimal trajectories, value functions and a-priori bounds.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod conjugate;
pub mod error;
pub mod flow;
pub mod grid;
pub mod jet;
pub mod linalg;
pub mod ode;
pub mod optimality;
pub mod perturbation;
pub mod problem;

pub use error::{Error, Result};
pub use problem::{Problem, TerminalCost};
