//! Command implementations behind the `flowforge` binary.

pub mod args;
pub mod commands;
pub mod error;
pub mod report;
