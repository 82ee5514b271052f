//! File formats, checkpoints and the command-line driver around
//! [`metafilm_core`].

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod report;
pub mod vectors;

pub use error::{CliError, Result};
