//! Config-driven experiments on top of `harnack-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod initial;

pub use commands::{run, Command, RunOptions};
pub use config::ExperimentConfig;
