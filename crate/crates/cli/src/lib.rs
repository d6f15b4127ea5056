//! Configuration-driven experiment runner for divide-and-conquer Markov
//! melding.

pub mod config;
pub mod error;
pub mod run;

pub use config::{ModelConfig, ModelKind, RunConfig, SamplerConfig, SamplerKind};
pub use error::{CliError, Result};
pub use run::{config_hash, run_experiment, summarize_file, Manifest, RunOutput};
