//! Covariance steering for linear stochastic systems.
//!
//! Modules follow the workflow: check whether a target is reachable
//! ([`feasibility`]), hold a stationary covariance with a constant gain
//! ([`stationary`]), steer between covariances over a finite horizon
//! ([`sdpsteer`], [`schrodinger`]) and check the result by Monte Carlo
//! ([`simulate`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod feasibility;
pub mod matops;
pub mod schrodinger;
pub mod sdpsteer;
pub mod simulate;
pub mod stationary;

pub use error::{Error, Result};
pub use matops::{Mat, SymMat};
