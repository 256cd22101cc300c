//! Run configuration: an optional JSON file whose values command-line flags
//! override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statefuse::models::{ModelSettings, Mode};
use statefuse::simgen::GenerateConfig;
use statefuse::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `suturing`, `rious` or `modality-exclusive`.
    pub task: Option<String>,
    /// Custom task file; takes precedence over `task`.
    pub task_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub generate: GenerateConfig,
    pub models: ModelSettings,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), e.line())))
    }
}

/// Describes the trained models in a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDirInfo {
    pub task: String,
    pub vocab: Vec<String>,
    pub sample_rate_hz: f64,
    pub n_kin: usize,
    pub n_vis: usize,
    pub n_evt: usize,
}

pub const INFO_FILE: &str = "run.json";
