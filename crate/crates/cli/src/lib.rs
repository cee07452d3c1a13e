//! Command-line front end: configuration files, the subcommands and the
//! self-check suite.

pub mod commands;
pub mod config;
pub mod verify;
