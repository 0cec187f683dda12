//! Command-line surface of the FreeCond lab: config handling, the five
//! commands and the exit-code scheme.

pub mod commands;
pub mod config;
pub mod exit;

pub use commands::{
    cmd_ci_report, cmd_gen_weights, cmd_inpaint, cmd_metrics, cmd_sweep, resolve_threads, Axis,
    MetricsRequest, SweepRow, TokenSelector,
};
pub use config::{Overrides, RunConfig};
pub use exit::{CliError, EXIT_CONFIG, EXIT_INTEGRITY, EXIT_IO, EXIT_OK};
