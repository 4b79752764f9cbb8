use std::path::Path;

use serde::{Deserialize, Serialize};
use uta_nn::checkpoint::Checkpoint;
use uta_nn::params::ParamStore;
use uta_nn::sis::{self, SisConfig};
use uta_nn::tcc::{self, TccConfig};

use crate::error::{Error, Result};

/// Metadata stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub sis: SisConfig,
    pub tcc: TccConfig,
    pub step: usize,
    pub epoch: usize,
    pub seed: u64,
}

/// Both networks with their weights in one store.
#[derive(Clone, Debug)]
pub struct Model {
    pub sis: SisConfig,
    pub tcc: TccConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(sis_cfg: SisConfig, tcc_cfg: TccConfig, seed: u64) -> Result<Self> {
        let mut params = sis::init_params(&sis_cfg, seed)?;
        params.extend(tcc::init_params(&tcc_cfg, seed.wrapping_add(1))?)?;
        Ok(Self {
            sis: sis_cfg,
            tcc: tcc_cfg,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, step: usize, epoch: usize, seed: u64) -> Result<()> {
        let meta = CheckpointMeta {
            sis: self.sis,
            tcc: self.tcc.clone(),
            step,
            epoch,
            seed,
        };
        let ckpt = Checkpoint {
            meta: serde_json::to_value(meta)?,
            params: self.params.clone(),
        };
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CheckpointMeta)> {
        let ckpt = Checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta)
            .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let expected = Self::init(meta.sis, meta.tcc.clone(), 0)?;
        for (name, t) in expected.params.iter() {
            let got = ckpt.params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if ckpt.params.len() != expected.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, expected {}",
                ckpt.params.len(),
                expected.params.len()
            )));
        }
        Ok((
            Self {
                sis: meta.sis,
                tcc: meta.tcc.clone(),
                params: ckpt.params,
            },
            meta,
        ))
    }
}
