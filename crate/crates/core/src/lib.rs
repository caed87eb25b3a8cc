//! Optimal sum rate and explicit achievability certificates for vector
//! Gaussian multiple description coding with tree-structured distortion
//! constraints.
//!
//! The pipeline: [`optimizer::solve`] maximizes the sum-rate objective over
//! a chain of auxiliary covariances, [`scheme`] turns the optimizer's KKT
//! point into an explicit Gaussian test channel, and [`certificate`] checks
//! that the channel achieves the optimal value and meets every distortion
//! constraint.

#![cfg_attr(not(test), no_std)]
// `!(x > y)` rejects NaN along with the failing case.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod certificate;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod scheme;
pub mod tree;

pub use error::Error;
pub use linalg::{SymMatrix, Tolerance};
pub use tree::{Node, NodeMap, ProblemInstance};
