//! Monte Carlo experiment harness behind the `knockoff-esd` binary.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{parse_config, parse_config_str, BaselineConfig, ExperimentConfig, LambdaPolicy, ModelConfig};
pub use experiment::{run_experiment, Experiment, ExperimentOutput, MechanismSummary, TrialRecord};
pub use output::{format_sig, records_to_csv, write_csv, CSV_HEADER};
