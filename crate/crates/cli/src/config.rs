//! Layered run configuration: defaults, then an optional JSON config file,
//! then command-line flags, then the ILAC_SEED environment variable. The
//! fully resolved configuration is echoed before a command runs so any run
//! can be reproduced from its log.

use anyhow::{Context, Result};
use ilac_core::data::GenSpec;
use ilac_core::model::{ModelConfig, NodeContextStage};
use ilac_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfigFile {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub gen: Option<GenSpec>,
}

pub fn load_config_file(path: Option<&Path>) -> Result<RunConfigFile> {
    match path {
        None => Ok(RunConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config file {}", p.display()))
        }
    }
}

/// Seed override from the environment: ILAC_SEED beats flags and files.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var("ILAC_SEED") {
        Ok(v) => {
            let seed: u64 = v
                .parse()
                .with_context(|| format!("ILAC_SEED must be an integer, got {v:?}"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Reference dimensions (d=512, feature dim 4096).
    Paper,
    /// CPU-scale dimensions (d=64, feature dim 32).
    Desk,
}

pub fn base_model_config(profile: Profile) -> ModelConfig {
    match profile {
        Profile::Paper => ModelConfig::default(),
        Profile::Desk => ModelConfig::desk_scale(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NodeCtxFlag {
    /// Node updates read the context just produced this iteration.
    Updated,
    /// Node updates read the previous iteration's context.
    Previous,
}

impl From<NodeCtxFlag> for NodeContextStage {
    fn from(f: NodeCtxFlag) -> Self {
        match f {
            NodeCtxFlag::Updated => NodeContextStage::Updated,
            NodeCtxFlag::Previous => NodeContextStage::Previous,
        }
    }
}

/// Echo the resolved configuration as one JSON document on stdout.
pub fn echo_config<T: Serialize>(label: &str, cfg: &T) {
    let json = serde_json::to_string(cfg).expect("config serializes");
    println!("resolved {label} config: {json}");
}
