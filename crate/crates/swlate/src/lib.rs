//! File formats, configuration, and the command-line workflows built on
//! `swlate-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod presets;
pub mod report;
pub mod run;

pub use config::{parse_config, validate_config, ConfigIssue, Mode, RunConfig};
pub use error::{CliError, CliResult};
pub use run::{run, RunOutput};
