use std::path::{Path, PathBuf};

use rekp_core::features::RealizationConfig;
use rekp_core::geometry::StreetParams;
use rekp_core::pool::PoolParams;
use rekp_core::predict::{DEFAULT_K, DEFAULT_TAU};
use serde::Deserialize;

use crate::CliError;

/// Settings shared by every subcommand. Flags override file values.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scene: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub street: StreetParams,
    pub realization: RealizationConfig,
    pub pool: PoolParams,
    pub tau: f64,
    pub k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scene: None,
            out_dir: None,
            street: StreetParams::default(),
            realization: RealizationConfig::default(),
            pool: PoolParams::default(),
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn scene_path(&self) -> PathBuf {
        self.scene.clone().unwrap_or_else(|| self.out_dir().join("scene.json"))
    }
}
