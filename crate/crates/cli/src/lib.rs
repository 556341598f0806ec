//! Experiment runner behind the `ringfem` binary.

pub mod commands;
pub mod output;
