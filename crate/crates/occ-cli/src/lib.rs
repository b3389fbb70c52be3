//! The `occgen` command line: dataset synthesis, voxelization, rendering,
//! training, generation, planning, metrics and self-verification.

pub mod checks;
pub mod cli;
pub mod dataset;
pub mod manifest;

pub type Result<T> = anyhow::Result<T>;

pub use cli::{run, Cli};
