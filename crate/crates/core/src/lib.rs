//! Consensus-based optimization with random batch interactions, heterogeneous
//! noise and ergodicity-coefficient diagnostics.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batching;
pub mod cli;
pub mod config;
pub mod consensus;
pub mod dynamics;
pub mod ensemble;
pub mod ergodicity;
pub mod error;
pub mod exec;
pub mod harness;
pub mod objectives;

pub use error::{Error, Result};
