//! Dual-encoder sketching network: separate event and thermal pyramids,
//! concatenation fusion per level and a transposed-convolution decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::ops::{concat, conv2d, conv_transpose2d, instance_norm, leaky_relu, sigmoid};
use crate::params::{kaiming_uniform, Bindings, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SisConfig {
    /// Number of stride-2 levels `K`.
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for SisConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_channels: 32,
        }
    }
}

impl SisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config(format!("SIS needs levels ≥ 1 and channels ≥ 1: {self:?}")));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Event,
    Thermal,
}

impl Modality {
    fn prefix(self) -> &'static str {
        match self {
            Modality::Event => "sis.enc_ev",
            Modality::Thermal => "sis.enc_ir",
        }
    }
}

/// Encoder features `F^0..F^K`, each `[B, C_k, H/2^k, W/2^k]`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

/// Fresh SIS parameters under the `sis.` prefix; biases start at zero.
pub fn init_params(cfg: &SisConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for m in [Modality::Event, Modality::Thermal] {
        for k in 0..=cfg.levels {
            let cin = if k == 0 { 1 } else { cfg.channels(k - 1) };
            let cout = cfg.channels(k);
            p.insert(
                format!("{}.{k}.weight", m.prefix()),
                kaiming_uniform(&mut rng, &[cout, cin, 3, 3], cin * 9),
            );
            p.insert(format!("{}.{k}.bias", m.prefix()), Tensor::zeros(&[cout]));
        }
    }
    for k in (0..=cfg.levels).rev() {
        let cin = 2 * cfg.channels(k) + if k < cfg.levels { cfg.channels(k) } else { 0 };
        let cout = if k == 0 { 1 } else { cfg.channels(k - 1) };
        p.insert(
            format!("sis.dec.{k}.weight"),
            kaiming_uniform(&mut rng, &[cin, cout, 3, 3], cin * 9),
        );
        p.insert(format!("sis.dec.{k}.bias"), Tensor::zeros(&[cout]));
    }
    Ok(p)
}

fn check_input(x: &Var, cfg: &SisConfig) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::Config(format!("SIS input must be [B, 1, H, W], got {s:?}")));
    }
    let d = cfg.divisor();
    if s[2] % d != 0 || s[3] % d != 0 || s[2] == 0 || s[3] == 0 {
        return Err(Error::Config(format!(
            "SIS input {}x{} is not divisible by {d}",
            s[3], s[2]
        )));
    }
    Ok(())
}

/// Runs one modality's encoder.
pub fn encode(p: &Bindings, frame: &Var, which: Modality, cfg: &SisConfig) -> Result<FeaturePyramid> {
    check_input(frame, cfg)?;
    let mut levels = Vec::with_capacity(cfg.levels + 1);
    let mut x = frame.clone();
    for k in 0..=cfg.levels {
        let w = p.get(&format!("{}.{k}.weight", which.prefix()))?;
        let b = p.get(&format!("{}.{k}.bias", which.prefix()))?;
        let stride = if k == 0 { 1 } else { 2 };
        x = leaky_relu(&instance_norm(&conv2d(&x, w, Some(b), stride, 1)?)?);
        levels.push(x.clone());
    }
    Ok(FeaturePyramid { levels })
}

/// Decodes from the coarsest level down:
/// `O_{k−1} = Dcov_k([F_IR^k, F_EV^k, O_k])`, with a final stride-1 step
/// to one channel squashed into `[0, 1]`.
pub fn fuse_decode(p: &Bindings, ev: &FeaturePyramid, ir: &FeaturePyramid, cfg: &SisConfig) -> Result<Var> {
    if ev.levels.len() != cfg.levels + 1 || ir.levels.len() != cfg.levels + 1 {
        return Err(Error::Config("pyramid depth does not match the configuration".into()));
    }
    let mut running: Option<Var> = None;
    for k in (0..=cfg.levels).rev() {
        let (fe, fi) = (&ev.levels[k], &ir.levels[k]);
        if fe.shape() != fi.shape() {
            return Err(shape_err(fi.shape(), fe.shape()));
        }
        let mut parts = vec![fi.clone(), fe.clone()];
        if let Some(o) = &running {
            if o.shape()[2..] != fi.shape()[2..] {
                return Err(shape_err(fi.shape(), o.shape()));
            }
            parts.push(o.clone());
        }
        let x = concat(&parts, 1)?;
        let w = p.get(&format!("sis.dec.{k}.weight"))?;
        let b = p.get(&format!("sis.dec.{k}.bias"))?;
        running = Some(if k == 0 {
            sigmoid(&conv_transpose2d(&x, w, Some(b), 1, 1, 0)?)
        } else {
            leaky_relu(&instance_norm(&conv_transpose2d(&x, w, Some(b), 2, 1, 1)?)?)
        });
    }
    Ok(running.expect("at least one level"))
}

/// `Î_f` for a batch of event and thermal frames, both `[B, 1, H, W]`.
pub fn sis_forward(p: &Bindings, ev: &Var, ir: &Var, cfg: &SisConfig) -> Result<Var> {
    if ev.shape() != ir.shape() {
        return Err(shape_err(ir.shape(), ev.shape()));
    }
    let fe = encode(p, ev, Modality::Event, cfg)?;
    let fi = encode(p, ir, Modality::Thermal, cfg)?;
    fuse_decode(p, &fe, &fi, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::no_grad;

    fn small() -> SisConfig {
        SisConfig {
            levels: 2,
            base_channels: 4,
        }
    }

    #[test]
    fn output_matches_input_shape_and_range() {
        let cfg = small();
        let p = init_params(&cfg, 3).unwrap().bind();
        let ev = Var::constant(Tensor::new(&[2, 1, 8, 12], (0..192).map(|i| (i % 5) as f64 / 4.0).collect()).unwrap());
        let ir = Var::constant(Tensor::filled(&[2, 1, 8, 12], 0.3));
        let y = no_grad(|| sis_forward(&p, &ev, &ir, &cfg)).unwrap();
        assert_eq!(y.shape(), &[2, 1, 8, 12]);
        assert!(y.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = small();
        let p = init_params(&cfg, 3).unwrap().bind();
        let x = Var::constant(Tensor::zeros(&[1, 1, 6, 8]));
        assert!(sis_forward(&p, &x, &x, &cfg).is_err());
    }

    #[test]
    fn encoders_have_equal_size_but_disjoint_parameters() {
        let store = init_params(&SisConfig::default(), 0).unwrap();
        let ev = store.scalar_count_with_prefix("sis.enc_ev.");
        assert_eq!(ev, store.scalar_count_with_prefix("sis.enc_ir."));
        assert_ne!(store.get("sis.enc_ev.0.weight").unwrap(), store.get("sis.enc_ir.0.weight").unwrap());
    }
}
