//! Loss-landscape exploration for small fully connected sigmoid networks.
//!
//! The crate traces paths through parameter space by retraining a model under an
//! off-center L2 penalty `β‖θ − θ_ref‖²` whose strength is increased step by step
//! ([`pathfinder::anneal`]). Along such a path it detects discontinuous jumps in the
//! converged error ([`pathfinder::detect_transitions`]), probes the Hessian spectrum of
//! the error with Lanczos ([`hessian`]), and checks whether independently trained minima
//! are joined by low-error paths ([`pathfinder::connect`]). A closed-form 1D landscape
//! ([`toy`]) provides an exact oracle for the jump mechanism.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod hessian;
pub mod mnist;
pub mod nn;
pub mod optim;
pub mod pathfinder;
pub mod report;
pub mod store;
pub mod toy;

pub use error::{Error, Result};
pub use nn::{Batch, NetworkSpec, ParameterVector};
