//! Scenario-driven front end for the consensus dynamics library: TOML
//! scenario files, builtin random scenarios, the analysis/simulation
//! pipeline, and CSV/JSON/SVG output.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod scenario;
pub mod svg;

pub use config::{load_config, parse_config, Format, LoadedConfig, ScenarioConfig};
pub use error::CliError;
pub use pipeline::{emit, execute, run_batch, run_scenario, Artifacts, Command, Overrides};
