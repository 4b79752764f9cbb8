//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{no_grad, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared absolutely: central differences
/// carry round-off near `ε·|f|/h`, so a structurally zero gradient (a bias
/// feeding a normalization) reads as noise around 1e-10.
pub const ZERO_GRADIENT_SCALE: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, ZERO_GRADIENT_SCALE)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ZERO_GRADIENT_SCALE)
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// `count` scalar positions drawn uniformly over all parameters.
pub fn random_probes(store: &ParamStore, count: usize, seed: u64) -> Vec<(String, usize)> {
    let total = store.scalar_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(&String, usize)> = store.iter().map(|(k, v)| (k, v.len())).collect();
    (0..count.min(total))
        .map(|_| {
            let mut r = rng.gen_range(0..total);
            for &(name, len) in &entries {
                if r < len {
                    return (name.clone(), r);
                }
                r -= len;
            }
            unreachable!("index within total")
        })
        .collect()
}

fn scalar(v: &Var) -> Result<f64> {
    if v.value().len() != 1 {
        return Err(Error::Config(format!("objective must be scalar, got {:?}", v.shape())));
    }
    Ok(v.value().item())
}

fn nudged(t: &Tensor, index: usize, delta: f64) -> Tensor {
    let mut d = t.to_vec();
    d[index] += delta;
    Tensor::new(t.shape(), d).expect("same shape")
}

/// Analytic vs numeric derivative of `objective` at each probed parameter.
pub fn check_parameters(
    store: &ParamStore,
    probes: &[(String, usize)],
    step: f64,
    objective: impl Fn(&Bindings) -> Result<Var>,
) -> Result<Vec<Probe>> {
    let bound = store.bind();
    let loss = objective(&bound)?;
    scalar(&loss)?;
    loss.backward();
    let grads = bound.grads();
    probes
        .iter()
        .map(|(name, index)| {
            let base = store.get(name)?;
            let eval = |delta: f64| -> Result<f64> {
                let mut s = store.clone();
                s.set(name, nudged(base, *index, delta))?;
                no_grad(|| objective(&s.bind()).and_then(|v| scalar(&v)))
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            Ok(Probe {
                name: name.clone(),
                index: *index,
                analytic: grads[name].data()[*index],
                numeric,
            })
        })
        .collect()
}

/// Analytic vs numeric derivative of `objective` with respect to entries of
/// its input.
pub fn check_input(
    input: &Tensor,
    indices: &[usize],
    step: f64,
    objective: impl Fn(&Var) -> Result<Var>,
) -> Result<Vec<Probe>> {
    let x = Var::parameter(input.clone());
    let loss = objective(&x)?;
    scalar(&loss)?;
    loss.backward();
    let grad = x
        .grad()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));
    indices
        .iter()
        .map(|&i| {
            let eval = |delta: f64| -> Result<f64> {
                no_grad(|| objective(&Var::constant(nudged(input, i, delta))).and_then(|v| scalar(&v)))
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            Ok(Probe {
                name: "input".into(),
                index: i,
                analytic: grad.data()[i],
                numeric,
            })
        })
        .collect()
}
