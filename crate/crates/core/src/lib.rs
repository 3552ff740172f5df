//! Balanced off-policy evaluation and learning from logged bandit feedback.
//!
//! The crate computes balancing weights for a target policy by minimizing a
//! kernel worst-case conditional-MSE objective over the scaled simplex,
//! evaluates policies with weighted, doubly robust and inverse-propensity
//! estimators, and learns softmax policies by differentiating through the
//! weight QP.
//!
//! Everything here is `no_std` with `alloc`; file formats, the CLI and thread
//! pools live in the `balpol` crate.

#![no_std]
// Dense numerical kernels read better with explicit indices.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]
// `!(x > 0.0)` style checks deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `Float` supplies sqrt/exp/ln without std; when std is linked anyway its
// inherent methods win and the import looks unused.
#![allow(unused_imports)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod balance;
pub mod data;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod learner;
pub mod models;
pub mod simulation;

pub use balance::{BalanceConfig, ImbalanceScale, LambdaSpec, QpOptions, WeightsSolution};
pub use data::{LoggedDataset, Policy, PolicyAssignment, TrueEnvironment, Violation};
pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelSpec, ScaleMatrix};
pub use learner::{LearnerConfig, LogitPolicy};

/// Dense matrix type used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector type used throughout.
pub type Vector = nalgebra::DVector<f64>;
