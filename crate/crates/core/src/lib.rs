//! Federated optimization simulator for local SGD with momentum, variance
//! reduction and control variates.
//!
//! The crate is layered bottom-up: [`problems`] synthesizes objectives with
//! exact gradient oracles, [`sampling`] draws client cohorts, [`engine`] runs
//! rounds of the six algorithms, [`schedules`] turns problem constants into
//! hyperparameters, [`diagnostics`] measures runs, and [`harness`] provides
//! configuration, CSV output and the `validate` suite behind the CLI.

// `!(x > 0.0)` style checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod sampling;
pub mod schedules;
pub mod stream;

pub use engine::{AlgoConfig, Checkpoint, ClientControls, Engine, RoundReport, ServerState, Variant};
pub use error::{Error, Result};
pub use problems::FederatedProblem;
pub use schedules::{schedule_for, Schedule, ScheduleInput};
