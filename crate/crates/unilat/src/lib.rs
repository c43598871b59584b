//! File formats, run directories and the command-line front end for
//! `unilat-core`: the text config format, the checkpoint container, PNG
//! export and image-folder ingestion, and the subcommands of the `unilat`
//! binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod images;
pub mod rundir;

pub use config::RunConfig;
pub use error::{Error, Result};
