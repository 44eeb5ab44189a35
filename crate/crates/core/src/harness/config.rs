use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amp::{AmpConfig, DiscConfig, GateConfig};
use crate::clips::ClipConfig;
use crate::error::{Error, Result};
use crate::ppo::{EpisodeConfig, PpoConfig};
use crate::rewards::RewardWeights;
use crate::sim::BipedModel;

/// Everything a training run needs. Every field has a default and unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub single_thread: bool,
    pub out_dir: Option<PathBuf>,
    /// Checkpoint period in iterations; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Directory with pre-generated clips. Clips are generated in memory
    /// from `clips` when absent.
    pub clips_dir: Option<PathBuf>,
    pub model: BipedModel,
    pub rewards: RewardWeights,
    /// Task-reward weights for recovery-gated steps; `rewards` when absent.
    pub rec_rewards: Option<RewardWeights>,
    pub amp: AmpConfig,
    pub gate: GateConfig,
    pub disc: DiscConfig,
    pub ppo: PpoConfig,
    pub episodes: EpisodeConfig,
    pub clips: ClipConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            iterations: 2000,
            single_thread: false,
            out_dir: None,
            checkpoint_every: 100,
            clips_dir: None,
            model: BipedModel::default(),
            rewards: RewardWeights::default(),
            rec_rewards: None,
            amp: AmpConfig::default(),
            gate: GateConfig::default(),
            disc: DiscConfig::default(),
            ppo: PpoConfig::default(),
            episodes: EpisodeConfig::default(),
            clips: ClipConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.rewards.validate()?;
        if let Some(w) = &self.rec_rewards {
            w.validate()?;
        }
        self.amp.validate()?;
        self.gate.validate()?;
        self.disc.validate()?;
        self.ppo.validate()?;
        self.episodes.validate()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}
