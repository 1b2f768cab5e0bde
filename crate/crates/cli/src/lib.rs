//! Command-line driver for the `twosize` toolkit: experiment configs, CSV/JSON
//! output with run manifests, and the acceptance suite.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod validate;

pub use config::{load_config, parse_config, Command, ExperimentConfig, Format, OutputSpec, Quantity};
pub use error::{CliError, ErrorReport};
pub use output::RunManifest;
pub use run::{render, render_with_threads, run, Rendered, RunSummary};
pub use validate::{run_suite, select, Outcome};
