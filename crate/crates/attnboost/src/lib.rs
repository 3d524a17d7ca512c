//! File formats, dataset IO and the command line for `attnboost-core`.

pub mod access;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod imageio;
pub mod pmap;

pub use cli::run_command;
pub use error::{AccessDenied, FormatError};
