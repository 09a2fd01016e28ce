//! Declarative run configuration.
//!
//! One TOML file drives every CLI command; flags override individual
//! fields. Defaults equal the full-scale settings; desk runs shrink the
//! counts explicitly. Serialization round-trips exactly, which is what
//! makes manifests replayable.

use crate::fem::MaterialModel;
use crate::meta::MetaConfig;
use crate::network::NetworkConfig;
use crate::optim::{OptimizeConfig, StoppingConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub nelx: usize,
    pub nely: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { nelx: 64, nely: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; every component derives a named substream from it.
    pub seed: u64,
    pub output_dir: String,
    /// Worker threads for parallel sections; 0 means all available cores.
    pub jobs: usize,
    pub mesh: MeshConfig,
    pub network: NetworkConfig,
    pub meta: MetaConfig,
    pub optimize: OptimizeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".to_string(),
            jobs: 0,
            mesh: MeshConfig::default(),
            network: NetworkConfig::conditioned_default(),
            meta: MetaConfig::default(),
            optimize: OptimizeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn material(&self) -> MaterialModel {
        self.optimize.material
    }

    pub fn stopping(&self) -> StoppingConfig {
        self.optimize.stopping
    }
}
