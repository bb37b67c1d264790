//! Configuration and visualization behind the `probegen` command.

pub mod config;
pub mod visualize;

pub use config::{AblationSection, AxisName, CliConfig, RESOLVED_FILE};
