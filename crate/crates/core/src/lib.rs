//! Gaussian-process regression driven by stochastic dual descent.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod linalg;
pub mod objective;
pub mod posterior;
pub mod rng;
pub mod solver;
pub mod thompson;

pub use error::{Error, Result};
