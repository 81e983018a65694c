//! File formats, dataset layout and the command-line front end for `macunet-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;

pub use error::{Error, Result};
pub use macunet_core as core;
