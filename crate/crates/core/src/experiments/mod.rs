//! Configuration, sweep execution and CSV output for the command-line tool.

pub mod config;
pub mod csv;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, ExperimentKind};
pub use csv::{emit_csv, render_csv, CSV_HEADER};
pub use run::{build_problem, run_experiment, RowStatus, SweepRow};
