use std::path::Path;

use serde::{Deserialize, Serialize};
use uta_core::simgen::SimConfig;
use uta_nn::adam::AdamConfig;
use uta_nn::losses::LossWeights;
use uta_nn::sis::SisConfig;
use uta_nn::tcc::TccConfig;

use crate::error::{Error, Result};

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "UTA_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch: usize,
    pub epochs: usize,
    /// `[width, height]` of the random crop; `None` takes half of each
    /// frame dimension (a quarter of the area).
    pub crop: Option<[usize; 2]>,
    /// Random flips and quarter turns.
    pub augment: bool,
    pub seed: u64,
    /// Stops early once this many steps have run; the learning-rate
    /// schedule spans this count when set.
    pub max_steps: Option<usize>,
    /// `0` writes a checkpoint only at the end.
    pub checkpoint_every_epochs: usize,
    pub group_stride: usize,
    /// Trailing scenes held out of training.
    pub val_scenes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lr_start: 5e-4,
            lr_end: 1e-6,
            batch: 4,
            epochs: 20,
            crop: Some([128, 128]),
            augment: true,
            seed: 0,
            max_steps: None,
            checkpoint_every_epochs: 1,
            group_stride: 7,
            val_scenes: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: batch 16, 300 epochs, quarter-area crops.
    pub fn paper_scale() -> Self {
        Self {
            batch: 16,
            epochs: 300,
            crop: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy start > end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.batch == 0 || self.epochs == 0 || self.group_stride == 0 {
            return Err(Error::Config("batch, epochs and group_stride must be positive".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if let Some([w, h]) = self.crop {
            if w == 0 || h == 0 {
                return Err(Error::Config("crop must be non-empty".into()));
            }
        }
        Ok(())
    }
}

/// Every tunable of the pipeline in one document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub sim: SimConfig,
    pub sis: SisConfig,
    pub tcc: TccConfig,
    pub train: TrainConfig,
    pub losses: LossWeights,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.sis.validate()?;
        self.tcc.validate()?;
        self.train.validate()?;
        if self.tcc.frames > self.sim.group_len {
            return Err(Error::Config(format!(
                "TCC volume of {} frames exceeds the group length {}",
                self.tcc.frames, self.sim.group_len
            )));
        }
        Ok(())
    }

    pub fn size_multiple(&self) -> usize {
        size_multiple(&self.sis, &self.tcc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file and applies the environment override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(seed) = seed_override(std::env::var(SEED_ENV).ok().as_deref())? {
            self.train.seed = seed;
        }
        Ok(())
    }
}

/// Parses the value of [`SEED_ENV`].
pub fn seed_override(value: Option<&str>) -> Result<Option<u64>> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
    }
}

/// Spatial sizes fed to the networks must be multiples of this.
pub fn size_multiple(sis: &SisConfig, tcc: &TccConfig) -> usize {
    let (a, b) = (sis.divisor(), tcc.divisor());
    a / gcd(a, b) * b
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
