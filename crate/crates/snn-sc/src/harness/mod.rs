//! Experiment harness: synthetic data, configuration, evaluation sweeps and
//! report generation.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod report;

pub use config::ConfigMap;
pub use dataset::{Dataset, DatasetSpec};
pub use experiment::{EvalData, SweepRow};
