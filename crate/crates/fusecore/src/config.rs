//! Run configuration. Presets ship as complete TOML files embedded in
//! the crate; a user config is a complete file of the same schema
//! (typically a copied preset with edits). Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasynth::{DatasetConfig, SeedRange};
use crate::error::{FuseError, Result};
use crate::pipeline::ModelDims;
use crate::training::StageConfig;

pub const TOY_PRESET: &str = include_str!("../assets/config_toy.toml");
pub const PAPER_PRESET: &str = include_str!("../assets/config_paper.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraSection {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraSection {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dir: String,
    pub video_steps: usize,
    pub stage1: SeedRange,
    pub stage2: SeedRange,
    pub eval: SeedRange,
}

impl DataSection {
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            out_dir: self.dir.clone().into(),
            stage1: self.stage1,
            stage2: self.stage2,
            eval: self.eval,
            steps: self.video_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSection {
    /// Seeds for the text-only warmup corpus; must not overlap any split.
    pub text_seeds: SeedRange,
    pub opt: StageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: String,
    pub seed: u64,
    pub model: ModelDims,
    pub lora: LoraSection,
    pub warmup: WarmupSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Config {
    pub fn toy() -> Config {
        toml::from_str(TOY_PRESET).expect("embedded toy preset parses")
    }

    pub fn paper() -> Config {
        toml::from_str(PAPER_PRESET).expect("embedded paper preset parses")
    }

    pub fn preset(name: &str) -> Result<Config> {
        match name {
            "toy" => Ok(Config::toy()),
            "paper" => Ok(Config::paper()),
            other => Err(FuseError::Config(format!(
                "unknown preset {other:?}; expected toy | paper"
            ))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| FuseError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replace every seed with one global value.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.warmup.opt.seed = seed;
        self.train.stage1.seed = seed;
        self.train.stage2.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.frame % m.patch_size != 0 {
            return Err(FuseError::Config(
                "frame size must be divisible by patch_size".into(),
            ));
        }
        if m.frames < m.clips * m.frames_per_clip {
            return Err(FuseError::Config(
                "frames must cover clips x frames_per_clip".into(),
            ));
        }
        for (name, d, h) in [
            ("encoder", m.encoder_dim, m.encoder_heads),
            ("fusion", m.fusion_dim, m.fusion_heads),
            ("lm", m.lm_dim, m.lm_heads),
        ] {
            if h == 0 || d % h != 0 {
                return Err(FuseError::Config(format!(
                    "{name} heads must divide its width"
                )));
            }
        }
        if self.lora.rank == 0 {
            return Err(FuseError::Config("lora rank must be positive".into()));
        }
        self.train.stage1.schedule()?;
        self.train.stage2.schedule()?;
        self.warmup.opt.schedule()?;
        for (name, range) in [
            ("stage1", &self.data.stage1),
            ("stage2", &self.data.stage2),
            ("eval", &self.data.eval),
        ] {
            if self.warmup.text_seeds.overlaps(range) {
                return Err(FuseError::Config(format!(
                    "warmup text seeds overlap the {name} split"
                )));
            }
        }
        Ok(())
    }
}
