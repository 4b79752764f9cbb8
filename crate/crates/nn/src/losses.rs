//! Training objectives: SIS and TCC L1 terms, masked perceptual loss on a
//! frozen random feature pyramid, and the Laplacian edge loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::ops::{add, conv2d, l1_loss, laplacian, leaky_relu, masked_l1, scale};
use crate::params::kaiming_uniform;
use crate::tensor::Tensor;

pub const PERCEPTUAL_SEED: u64 = 0x5eed_0f_fea7;

/// `(in, out, stride)` of each extractor depth.
const EXTRACTOR_LAYERS: [(usize, usize, usize); 3] = [(1, 8, 1), (8, 16, 2), (16, 32, 2)];

pub fn l_sis(pred: &Var, target: &Var) -> Result<Var> {
    l1_loss(pred, target)
}

pub fn l_tcc(pred: &Var, target: &Var) -> Result<Var> {
    l1_loss(pred, target)
}

pub fn l_gradient(pred: &Var, target: &Var) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(shape_err(pred.shape(), target.shape()));
    }
    l1_loss(&laplacian(pred)?, &laplacian(target)?)
}

/// Frozen convolutional pyramid used as the perceptual feature space.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    layers: Vec<(Var, usize)>,
}

impl PerceptualExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = EXTRACTOR_LAYERS
            .iter()
            .map(|&(cin, cout, stride)| {
                (
                    Var::constant(kaiming_uniform(&mut rng, &[cout, cin, 3, 3], cin * 9)),
                    stride,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn depths(&self) -> usize {
        self.layers.len()
    }

    /// Features of a `[B, 1, H, W]` image at every depth.
    pub fn features(&self, x: &Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut f = x.clone();
        for (w, stride) in &self.layers {
            f = leaky_relu(&conv2d(&f, w, None, *stride, 1)?);
            out.push(f.clone());
        }
        Ok(out)
    }
}

impl Default for PerceptualExtractor {
    fn default() -> Self {
        Self::new(PERCEPTUAL_SEED)
    }
}

/// Nearest-neighbour resampling of a `[B, 1, H, W]` mask to `h × w`.
fn downsample_mask(mask: &Tensor, h: usize, w: usize) -> Tensor {
    let s = mask.shape();
    let (b, mh, mw) = (s[0], s[2], s[3]);
    let sy = mh.div_ceil(h).max(1);
    let sx = mw.div_ceil(w).max(1);
    let mut out = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let (yy, xx) = ((y * sy).min(mh - 1), (x * sx).min(mw - 1));
                out.push(mask.data()[(bi * mh + yy) * mw + xx]);
            }
        }
    }
    Tensor::new(&[b, 1, h, w], out).expect("consistent shape")
}

/// Sum over extractor depths of the masked mean absolute feature difference.
/// Zero for an empty mask.
pub fn l_perceptual(pred: &Var, target: &Var, mask: &Tensor, extractor: &PerceptualExtractor) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(shape_err(pred.shape(), target.shape()));
    }
    if mask.shape() != pred.shape() {
        return Err(shape_err(pred.shape(), mask.shape()));
    }
    if mask.data().iter().all(|&m| m == 0.0) {
        return Ok(Var::constant(Tensor::scalar(0.0)));
    }
    let fp = extractor.features(pred)?;
    let ft = extractor.features(target)?;
    let mut total: Option<Var> = None;
    for (a, b) in fp.iter().zip(&ft) {
        let m = downsample_mask(mask, a.shape()[2], a.shape()[3]);
        let term = masked_l1(a, b, &m)?;
        total = Some(match total {
            None => term,
            Some(t) => add(&t, &term)?,
        });
    }
    total.ok_or_else(|| Error::Config("extractor has no layers".into()))
}

/// Per-term multipliers; all 1 reproduces the plain sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub sis: f64,
    pub tcc: f64,
    pub per: f64,
    pub grad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sis: 1.0,
            tcc: 1.0,
            per: 1.0,
            grad: 1.0,
        }
    }
}

/// Loss values of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub l_sis: f64,
    pub l_tcc: f64,
    pub l_per: f64,
    pub l_grad: f64,
}

impl FrameLoss {
    pub fn sum(&self) -> f64 {
        self.l_sis + self.l_tcc + self.l_per + self.l_grad
    }
}

/// Totals over frames, each accumulated in frame order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sis: f64,
    pub l_tcc: f64,
    pub l_per: f64,
    pub l_grad: f64,
    pub total: f64,
    pub per_frame: Vec<FrameLoss>,
}

pub fn total_loss(frames: &[FrameLoss]) -> LossReport {
    let mut r = LossReport {
        per_frame: frames.to_vec(),
        ..Default::default()
    };
    for f in frames {
        r.l_sis += f.l_sis;
        r.l_tcc += f.l_tcc;
        r.l_per += f.l_per;
        r.l_grad += f.l_grad;
        r.total += f.sum();
    }
    r
}

/// Graph nodes of one frame's terms; `l_tcc` only exists for frames the
/// temporal network predicted.
#[derive(Clone, Debug)]
pub struct FrameTerms {
    pub l_sis: Var,
    pub l_tcc: Option<Var>,
    pub l_per: Var,
    pub l_grad: Var,
}

impl FrameTerms {
    fn values(&self) -> FrameLoss {
        FrameLoss {
            l_sis: self.l_sis.value().item(),
            l_tcc: self.l_tcc.as_ref().map_or(0.0, |v| v.value().item()),
            l_per: self.l_per.value().item(),
            l_grad: self.l_grad.value().item(),
        }
    }
}

/// Weighted differentiable total, summed frame by frame in order, plus the
/// unweighted report.
pub fn combine(frames: &[FrameTerms], weights: &LossWeights) -> Result<(Var, LossReport)> {
    let mut total: Option<Var> = None;
    for f in frames {
        let mut parts = vec![scale(&f.l_sis, weights.sis)];
        if let Some(t) = &f.l_tcc {
            parts.push(scale(t, weights.tcc));
        }
        parts.push(scale(&f.l_per, weights.per));
        parts.push(scale(&f.l_grad, weights.grad));
        for p in parts {
            total = Some(match total {
                None => p,
                Some(t) => add(&t, &p)?,
            });
        }
    }
    let total = total.ok_or_else(|| Error::Config("no frames to combine".into()))?;
    let report = total_loss(&frames.iter().map(FrameTerms::values).collect::<Vec<_>>());
    Ok((total, report))
}
