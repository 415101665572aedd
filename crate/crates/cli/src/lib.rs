//! Configuration handling and pipeline stages behind the `clarep` binary.

pub mod commands;
pub mod config;
