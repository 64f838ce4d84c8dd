//! Experiment configs, orchestration and CSV reports.

mod config;
mod experiment;
mod table;

pub use config::{
    parse_config, parse_config_with, ConfigOverrides, ExperimentConfig, ExperimentKind, DEFAULT_BOOTSTRAP,
    DEFAULT_P, DEFAULT_STEIN_N, DEFAULT_WTAIL_N,
};
pub use experiment::{columns, run_experiment, BE_CI_LEVEL, TAIL_WINDOW};
pub use table::{emit_csv, Cell, ResultTable};
