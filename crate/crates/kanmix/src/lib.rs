//! Dataset loaders, checkpoints, result files and the experiment CLI built on
//! `kanmix-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod report;
pub mod results;

pub use error::{Error, Result};
