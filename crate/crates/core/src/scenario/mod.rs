//! Scenario configuration, execution and the self-check suite.

pub mod catalog;
pub mod config;
pub mod field_checks;
pub mod run;
pub mod suite;

pub use config::{load_config, parse_config, Analysis, ConfigError, Mode, ScenarioConfig};
pub use run::{execute, run, run_into, Manifest, RunArtifact, Status};
pub use suite::{check_suite, CheckEntry, Scale, SuiteOptions, SuiteReport};
