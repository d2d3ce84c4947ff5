//! Operational surface: configuration, experiment execution, output files
//! and the `validate` suite.

pub mod config;
pub mod run;
pub mod validate;

pub use config::{parse_config, Auto, RunConfig};
pub use run::{cmd_resume, cmd_run, cmd_sweep, execute, exit_code, RunOptions, RunOutcome, RunSummary};
pub use validate::{cmd_validate, run_checks, CheckResult, Scope};
