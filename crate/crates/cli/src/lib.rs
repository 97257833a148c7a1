//! Pipeline driver and prediction service for the `htenmr` binary.

pub mod cli;
pub mod commands;
pub mod service;

pub use cli::Cli;
pub use commands::run;
