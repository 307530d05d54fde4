//! Experiment driver: seeded regret runs and the estimator-accuracy benchmark,
//! both persisted as CSV.

pub mod config;
pub mod error;
pub mod estimators;
pub mod regret;

pub use config::{ExperimentConfig, FunctionSpec};
pub use error::{HarnessError, Result};
pub use estimators::{run_estimator_benchmark, EstimatorConfig, EstimatorReport};
pub use regret::{run_regret_experiment, ExperimentResult, RegretRow, SummaryRow};
