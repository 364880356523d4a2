//! Experiment configuration, example signals, result files and the
//! validation battery behind the `spoafd` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod validate;
