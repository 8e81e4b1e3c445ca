//! End-to-end runs of the ransomware token-classification pipeline:
//! `prepare`, `train`, `evaluate`, `explain` and `report` over one run
//! directory, driven by a flat TOML config.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod manifest;
pub mod pipeline;
pub mod svg;

pub use config::{ExplainMethods, InputSpec, RunConfig};
pub use error::{CliError, Result};
