use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(cfg.beta1) || !ok(cfg.beta2) || cfg.eps <= 0.0 {
            return Err(Error::Config(format!("invalid Adam settings {cfg:?}")));
        }
        Ok(Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Every parameter must have a
    /// gradient of matching shape.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let g = grads
                .get(&name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            let p = params.get(&name)?;
            if g.shape() != p.shape() {
                return Err(shape_err(p.shape(), g.shape()));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let mut out = p.to_vec();
            for i in 0..out.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                out[i] -= lr * mh / (vh.sqrt() + self.cfg.eps);
            }
            params.set(&name, Tensor::new(p.shape(), out)?)?;
        }
        Ok(())
    }
}

/// Linear interpolation from `start` at step 0 to `end` at `total − 1`.
pub fn linear_lr(start: f64, end: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return start;
    }
    let f = step.min(total - 1) as f64 / (total - 1) as f64;
    start + (end - start) * f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(&[2], vec![1.0, -1.0]).unwrap());
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::new(&[2], vec![0.5, -3.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default()).unwrap();
        adam.step(&mut p, &g, 0.1).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn lr_endpoints() {
        assert_eq!(linear_lr(5e-4, 1e-6, 0, 100), 5e-4);
        assert!((linear_lr(5e-4, 1e-6, 99, 100) - 1e-6).abs() < 1e-15);
    }
}
