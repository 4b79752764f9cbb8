//! Temporal correction network: deformable alignment of a sketch volume,
//! four shifted-window attention stages and a 2-D attention decoder for the
//! last (target) frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::{
    concat, conv2d, deform_conv2d, layer_norm, leaky_relu, linear, mean_axis, narrow, permute, reshape,
    resize_bilinear, sigmoid, space_to_depth, stack, window_attention_block, WindowAttentionParams,
};
use crate::params::{kaiming_uniform, normal, Bindings, ParamStore};
use crate::tensor::Tensor;

pub const STAGES: usize = 4;
const OFFSET_INIT_STD: f64 = 1e-2;
const ATTENTION_INIT_STD: f64 = 2e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TccConfig {
    /// Sketches per volume `N`.
    pub frames: usize,
    /// `(M_D, M_H, M_W)`.
    pub window: [usize; 3],
    pub stage_depths: [usize; STAGES],
    pub embed_dim: usize,
    pub heads: [usize; STAGES],
    pub decoder_window: [usize; 3],
    pub decoder_blocks: usize,
    pub decoder_heads: usize,
    /// Cut gradients between the sketching network and this one.
    pub detach_sis: bool,
}

impl Default for TccConfig {
    fn default() -> Self {
        Self {
            frames: 7,
            window: [2, 7, 7],
            stage_depths: [2, 2, 6, 2],
            embed_dim: 48,
            heads: [3, 6, 12, 24],
            decoder_window: [1, 7, 7],
            decoder_blocks: 2,
            decoder_heads: 3,
            detach_sis: false,
        }
    }
}

impl TccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.embed_dim == 0 {
            return bad(format!("frames and embed_dim must be positive: {self:?}"));
        }
        if self.window.contains(&0) || self.decoder_window.contains(&0) {
            return bad("window dims must be ≥ 1".into());
        }
        for l in 0..STAGES {
            let c = self.stage_channels(l);
            if self.heads[l] == 0 || c % self.heads[l] != 0 {
                return bad(format!("stage {} has {c} channels for {} heads", l + 1, self.heads[l]));
            }
        }
        if self.decoder_heads == 0 || self.embed_dim % self.decoder_heads != 0 {
            return bad(format!("{} decoder heads for {} channels", self.decoder_heads, self.embed_dim));
        }
        Ok(())
    }

    /// Channels inside stage `l` (0-based).
    pub fn stage_channels(&self, l: usize) -> usize {
        self.embed_dim << l
    }

    /// Spatial dims must be multiples of this (three 2× merges).
    pub fn divisor(&self) -> usize {
        1 << (STAGES - 1)
    }
}

fn insert_block(p: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, c: usize) {
    p.insert(format!("{prefix}.norm_gamma"), Tensor::filled(&[c], 1.0));
    p.insert(format!("{prefix}.norm_beta"), Tensor::zeros(&[c]));
    p.insert(format!("{prefix}.qkv_weight"), normal(rng, &[c, 3 * c], ATTENTION_INIT_STD));
    p.insert(format!("{prefix}.qkv_bias"), Tensor::zeros(&[3 * c]));
    p.insert(format!("{prefix}.proj_weight"), normal(rng, &[c, c], ATTENTION_INIT_STD));
    p.insert(format!("{prefix}.proj_bias"), Tensor::zeros(&[c]));
}

fn block_params(p: &Bindings, prefix: &str) -> Result<WindowAttentionParams> {
    let g = |n: &str| p.get(&format!("{prefix}.{n}")).cloned();
    Ok(WindowAttentionParams {
        norm_gamma: g("norm_gamma")?,
        norm_beta: g("norm_beta")?,
        qkv_weight: g("qkv_weight")?,
        qkv_bias: g("qkv_bias")?,
        proj_weight: g("proj_weight")?,
        proj_bias: g("proj_bias")?,
    })
}

/// Fresh TCC parameters under the `tcc.` prefix.
pub fn init_params(cfg: &TccConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let e = cfg.embed_dim;
    p.insert("tcc.align.offset.weight", normal(&mut rng, &[18, 2, 3, 3], OFFSET_INIT_STD));
    p.insert("tcc.align.offset.bias", Tensor::zeros(&[18]));
    p.insert("tcc.align.deform.weight", kaiming_uniform(&mut rng, &[e, 1, 3, 3], 9));
    p.insert("tcc.align.deform.bias", Tensor::zeros(&[e]));
    for l in 0..STAGES {
        let c = cfg.stage_channels(l);
        for i in 0..cfg.stage_depths[l] {
            insert_block(&mut p, &mut rng, &format!("tcc.stage{l}.block{i}"), c);
        }
        if l + 1 < STAGES {
            p.insert(format!("tcc.stage{l}.merge.norm_gamma"), Tensor::filled(&[4 * c], 1.0));
            p.insert(format!("tcc.stage{l}.merge.norm_beta"), Tensor::zeros(&[4 * c]));
            p.insert(format!("tcc.stage{l}.merge.weight"), normal(&mut rng, &[4 * c, 2 * c], ATTENTION_INIT_STD));
        }
    }
    let last = cfg.stage_channels(STAGES - 1);
    p.insert("tcc.dec.embed.weight", kaiming_uniform(&mut rng, &[last, e], last));
    p.insert("tcc.dec.embed.bias", Tensor::zeros(&[e]));
    for i in 0..cfg.decoder_blocks {
        insert_block(&mut p, &mut rng, &format!("tcc.dec.block{i}"), e);
    }
    p.insert("tcc.dec.head.weight", kaiming_uniform(&mut rng, &[e, 1], e));
    p.insert("tcc.dec.head.bias", Tensor::zeros(&[1]));
    Ok(p)
}

fn volume_dims(v: &Var, cfg: &TccConfig) -> Result<(usize, usize, usize, usize)> {
    let s = v.shape();
    if s.len() != 4 || s[1] == 0 {
        return Err(Error::Config(format!("sketch volume must be [B, N, H, W], got {s:?}")));
    }
    let d = cfg.divisor();
    if s[2] == 0 || s[3] == 0 || s[2] % d != 0 || s[3] % d != 0 {
        return Err(Error::Config(format!("volume {}x{} is not divisible by {d}", s[3], s[2])));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Aligns every sketch towards the last one: offsets come from a 3×3
/// convolution over `(V_n, V_t)`, features from a deformable 3×3
/// convolution of `V_n`. Returns `[B, N, H, W, E]`.
pub fn deform_align(p: &Bindings, v: &Var, cfg: &TccConfig) -> Result<Var> {
    let (_, n, _, _) = volume_dims(v, cfg)?;
    let target = narrow(v, 1, n - 1, 1)?;
    let (wo, bo) = (p.get("tcc.align.offset.weight")?, p.get("tcc.align.offset.bias")?);
    let (wd, bd) = (p.get("tcc.align.deform.weight")?, p.get("tcc.align.deform.bias")?);
    let frames = (0..n)
        .map(|i| {
            let vi = narrow(v, 1, i, 1)?;
            let offsets = conv2d(&concat(&[vi.clone(), target.clone()], 1)?, wo, Some(bo), 1, 1)?;
            let f = leaky_relu(&deform_conv2d(&vi, &offsets, wd, Some(bd), 1)?);
            permute(&f, &[0, 2, 3, 1])
        })
        .collect::<Result<Vec<_>>>()?;
    stack(&frames, 1)
}

/// Output of one attention stage.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub features: Var,
    pub blocks_executed: usize,
}

/// Stage `l` (0-based): `stage_depths[l]` blocks, all shifted except the
/// last, then 2×2 patch merging with channel doubling unless it is the last
/// stage.
pub fn swin_stage(p: &Bindings, x: &Var, l: usize, cfg: &TccConfig) -> Result<StageOutput> {
    if l >= STAGES {
        return Err(Error::Config(format!("stage index {l} out of range")));
    }
    let c = cfg.stage_channels(l);
    if x.shape().len() != 5 || x.shape()[4] != c {
        return Err(Error::Config(format!("stage {} expects {c} channels, got {:?}", l + 1, x.shape())));
    }
    let depth = cfg.stage_depths[l];
    let mut f = x.clone();
    for i in 0..depth {
        let bp = block_params(p, &format!("tcc.stage{l}.block{i}"))?;
        f = window_attention_block(&f, &bp, cfg.heads[l], cfg.window, i + 1 < depth)?;
    }
    if l + 1 < STAGES {
        let merged = space_to_depth(&f)?;
        let normed = layer_norm(
            &merged,
            p.get(&format!("tcc.stage{l}.merge.norm_gamma"))?,
            p.get(&format!("tcc.stage{l}.merge.norm_beta"))?,
        )?;
        f = linear(&normed, p.get(&format!("tcc.stage{l}.merge.weight"))?, None)?;
    }
    Ok(StageOutput {
        features: f,
        blocks_executed: depth,
    })
}

/// Temporal mean, projection to the embedding width, bilinear upsampling to
/// `(h, w)`, 2-D window attention and a sigmoid head. Returns `[B, 1, h, w]`.
pub fn decode_target(p: &Bindings, f_out: &Var, h: usize, w: usize, cfg: &TccConfig) -> Result<Var> {
    let s = f_out.shape();
    if s.len() != 5 {
        return Err(Error::Config(format!("decoder expects [B, T, h, w, C], got {s:?}")));
    }
    let (b, fh, fw) = (s[0], s[2], s[3]);
    let e = cfg.embed_dim;
    let pooled = mean_axis(f_out, 1)?;
    let embedded = linear(&pooled, p.get("tcc.dec.embed.weight")?, Some(p.get("tcc.dec.embed.bias")?))?;
    let planar = permute(&reshape(&embedded, &[b, fh, fw, e])?, &[0, 3, 1, 2])?;
    let up = resize_bilinear(&planar, h, w)?;
    let mut x = reshape(&permute(&up, &[0, 2, 3, 1])?, &[b, 1, h, w, e])?;
    for i in 0..cfg.decoder_blocks {
        let bp = block_params(p, &format!("tcc.dec.block{i}"))?;
        x = window_attention_block(&x, &bp, cfg.decoder_heads, cfg.decoder_window, i + 1 < cfg.decoder_blocks)?;
    }
    let y = linear(&x, p.get("tcc.dec.head.weight")?, Some(p.get("tcc.dec.head.bias")?))?;
    reshape(&sigmoid(&y), &[b, 1, h, w])
}

/// Full forward with the number of attention blocks run per stage.
pub fn tcc_forward_traced(p: &Bindings, v: &Var, cfg: &TccConfig) -> Result<(Var, [usize; STAGES])> {
    let (_, _, h, w) = volume_dims(v, cfg)?;
    let mut f = deform_align(p, v, cfg)?;
    let mut counts = [0; STAGES];
    for (l, count) in counts.iter_mut().enumerate() {
        let out = swin_stage(p, &f, l, cfg)?;
        *count = out.blocks_executed;
        f = out.features;
    }
    Ok((decode_target(p, &f, h, w, cfg)?, counts))
}

/// `I*_f` for the last frame of each `[B, N, H, W]` sketch volume.
pub fn tcc_forward(p: &Bindings, v: &Var, cfg: &TccConfig) -> Result<Var> {
    Ok(tcc_forward_traced(p, v, cfg)?.0)
}
