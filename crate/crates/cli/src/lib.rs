//! Run orchestration for the `sscl` binary: configuration, output formats
//! and subcommands.

pub mod commands;
pub mod config;
pub mod io;
