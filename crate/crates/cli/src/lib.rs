//! Command-line pipeline around `wdcgan-core`: configuration, stage runner,
//! run manifest and SVG plots.

pub mod config;
pub mod error;
pub mod manifest;
pub mod plots;
pub mod stages;

pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, CliResult};
pub use stages::Run;
