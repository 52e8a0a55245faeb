//! Command-line front end: configuration files and presets, metrics CSV logs, versioned
//! checkpoints, SVG charts and the `train`, `eval`, `gradcheck`, `plot` and `presets`
//! subcommands.

pub mod app;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod presets;

pub use error::{CliError, CliResult};
