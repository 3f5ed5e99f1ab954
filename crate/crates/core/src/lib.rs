//! Redundancy between a continuous per-word signal and its surrounding words,
//! measured as mutual information over a grid of past/future context sizes.

// Negated comparisons are used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conditional;
pub mod corpus;
pub mod density;
pub mod mi_sweep;
pub mod numeric;
pub mod predictor;
pub mod synthetic;
