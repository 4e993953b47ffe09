//! Synthetic benchmark, experiment runner and report emission.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod report;
pub mod svg;

pub use config::{ExperimentConfig, OUTPUT_ENV};
pub use dataset::{gen_dataset, Dataset, DatasetConfig, SyntheticScene};
pub use experiment::{predict_method, run_experiment, train_method, TrainedMethod};
pub use report::{emit_report, evaluate_log, MethodReport, MethodSummary};
