//! Experiment driver: TOML configs in, CSV/JSON result bundles out.

pub mod config;
pub mod output;
pub mod runner;
