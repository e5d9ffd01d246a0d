//! Experiment harness for posterior-mean rectified flow: configuration,
//! datasets, orchestration, reports and the closed-form oracle suite.

// Negated comparisons double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod oracle_check;

pub use config::{Dataset, ExperimentConfig, Method, Task};
pub use error::{LabError, Result};
pub use experiment::{run_experiment, ExperimentReport, RunOptions};
