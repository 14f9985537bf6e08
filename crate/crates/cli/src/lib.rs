//! Library side of the `sparq` command-line tool.

pub mod args;
pub mod cache;
pub mod commands;
pub mod manifest;
pub mod report;

pub use args::Cli;
pub use commands::{exit_code, run, Outcome};
