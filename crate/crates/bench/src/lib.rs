//! Experiment orchestration: plans of (scenario, background, whitening,
//! model, methods) cells run through generate → whiten → train → explain →
//! evaluate with content-addressed caching, plus aggregation and α calibration.

pub mod aggregate;
pub mod cache;
pub mod calibrate;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{BenchConfig, CellSelector, CellSpec, ExperimentPlan};
pub use error::{BenchError, Result};
pub use manifest::{CellRecord, CellStatus, RunManifest};
pub use pipeline::{run, RunOutcome};
