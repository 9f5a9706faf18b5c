//! Deep equilibrium layers trained with interchangeable backward strategies.
//!
//! A layer's output is the fixed point `z*` of `z = f(z, x)`, found by a
//! limited-memory Broyden solve ([`fixed_point`]). Gradients flow back
//! through `z*` via one of four adjoint strategies ([`backward`]): exact
//! implicit differentiation, Jacobian-free (JFB), Neumann-series phantom
//! gradients (NPG), or GDEQ, which re-uses the solver's final inverse-Jacobian
//! approximation. [`training`] assembles these into a small classifier.

// `!(x > 0.0)` is how config checks reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod cell;
pub mod data;
pub mod error;
pub mod fixed_point;
pub mod linalg;
pub mod training;

pub use backward::{AdjointVector, Strategy, StrategyConfig};
pub use cell::{CellKind, CellParams, ParamGrads};
pub use error::{Error, Result};
pub use fixed_point::{FixedPointSolution, SolverConfig};
pub use linalg::{LimitedMemoryInverse, Matrix, Vector};
