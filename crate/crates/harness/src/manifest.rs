//! Run manifests: what produced an output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub harness_version: String,
    pub core_version: String,
    pub overrides: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, overrides: &[String]) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: bevfuse_core::VERSION.to_string(),
            overrides: overrides.to_vec(),
        }
    }

    /// Writes `manifest.toml` and the resolved `config.toml` into `dir`.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.toml"),
            toml::to_string_pretty(self).expect("manifest serialises"),
        )?;
        cfg.save(&dir.join("config.toml"))
    }
}
