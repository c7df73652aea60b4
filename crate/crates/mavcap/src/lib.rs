//! Configuration files, checkpoints, CSV/JSON artifacts and the command
//! line for the capture laboratory in [`mavcap_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod exec;
pub mod output;

pub use config::{Overrides, RunConfig};
pub use exec::RayonExecutor;
pub use mavcap_core as core;
