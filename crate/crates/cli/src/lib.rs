//! Library half of the `embverify` command-line tool: configuration,
//! artifact bookkeeping and the pipeline stages.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
