//! Scenario files, headless runs, the realtime steering server and the
//! property suite of the `intentctl` command.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod runner;
pub mod scenario;
pub mod server;

pub use runner::{run_headless, RunOutput, RunSummary};
pub use scenario::{load_config, Scenario, ScenarioError};
