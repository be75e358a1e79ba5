//! Command-line plumbing around `enas-core`: configuration files, checkpoints,
//! JSONL metrics, DOT export and the subcommand drivers.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dot;
pub mod metrics;
