//! Entry points for the `pear` binary: an interactive terminal session, the
//! evaluation harness, log replay and an HTTP service.

pub mod cli;
pub mod serve;
pub mod setup;
pub mod terminal;

pub use cli::{cli_main, Cli, Command};
