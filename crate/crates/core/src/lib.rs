//! Credit assignment from policy log-probability ratios on exactly solvable tabular MDPs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod credit;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod policy;
pub mod reflector;
pub mod train;

pub use error::{Error, Result};
