//! Replayable run manifests: the resolved config plus the command
//! arguments, serialized as TOML next to the command's outputs.

use crate::commands::CommandSpec;
use metatopo::config::RunConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Crate version that produced the artifact.
    pub version: String,
    pub config: RunConfig,
    pub spec: CommandSpec,
}

impl Manifest {
    pub fn new(config: &RunConfig, spec: CommandSpec) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            spec,
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}
