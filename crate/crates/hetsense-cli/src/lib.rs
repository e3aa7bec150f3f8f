//! Experiment runner library behind the `hetsense` binary: configuration,
//! experiment orchestration, CSV/manifest/plot emission.

pub mod config;
pub mod csvio;
pub mod experiments;
pub mod manifest;
pub mod plot;
