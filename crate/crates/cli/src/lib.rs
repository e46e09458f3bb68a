//! Command-line driver: configuration, the replicate pipeline and the subcommands.

pub mod commands;
pub mod config;
pub mod pipeline;
