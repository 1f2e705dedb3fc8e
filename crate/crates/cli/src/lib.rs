//! Batch command surface over `traceta-core`: full runs, stage commands,
//! seeded replicates and provenance queries over a run directory.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod rundir;

pub use error::{CliError, CliResult};
