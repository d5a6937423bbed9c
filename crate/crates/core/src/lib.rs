//! Greedy actor-critic toolkit.
//!
//! Double Q critics drive a softmax exploration policy over sampled candidate
//! actions (greedy max of the two critics), while targets and policy learning
//! use the conservative min. The tabular module runs the same backup on finite
//! MDPs against an exact oracle.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod critic;
pub mod envs;
pub mod error;
pub mod exploration;
pub mod harness;
pub mod math_ops;
pub mod neural;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod schedule;
pub mod tabular;

pub use error::{Error, Result};
