//! Command-line front end: scenario documents, the solve, eval and study
//! commands, and the files they write.

pub mod artifact;
pub mod commands;
pub mod error;
pub mod spec;

pub use commands::{cmd_eval, cmd_solve, cmd_study, Overrides};
pub use error::{CliError, Exit};
pub use spec::{load_scenario, parse_scenario, save_scenario, ScenarioSpec};
