//! Joint training of the sketching and temporal-correction networks on
//! pseudo ground truth.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uta_core::Raster;
use uta_nn::adam::{linear_lr, Adam};
use uta_nn::losses::{combine, l_gradient, l_perceptual, l_sis, l_tcc, FrameTerms, LossReport, LossWeights, PerceptualExtractor};
use uta_nn::ops::{narrow, reshape};
use uta_nn::params::Bindings;
use uta_nn::sis::{sis_forward, SisConfig};
use uta_nn::tcc::{tcc_forward, TccConfig};
use uta_nn::{Tensor, Var};

use crate::augment::{crop_size, sample_transform, Transform};
use crate::cache::{build_cache, load_cached, PseudoGtParams};
use crate::config::Config;
use crate::dataset::{GroupRef, SceneDataset};
use crate::error::{Error, Result};
use crate::model::Model;

pub const LOSS_CSV: &str = "losses.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub l_sis: f64,
    pub l_tcc: f64,
    pub l_per: f64,
    pub l_grad: f64,
    pub total: f64,
}

/// Rasters of one group in thermal pixels, oldest frame first.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub thermal: Vec<Raster>,
    pub events: Vec<Raster>,
    pub masks: Vec<Raster>,
    pub sis_gt: Vec<Raster>,
    pub tcc_gt: Vec<Raster>,
}

impl Sample {
    pub fn load(ds: &SceneDataset, g: GroupRef) -> Result<Self> {
        let frames = ds.load_group(g)?;
        let targets = load_cached(ds, g)?;
        Ok(Self {
            thermal: frames.thermal,
            events: frames.events_ir,
            masks: targets.masks,
            sis_gt: targets.sis_gt,
            tcc_gt: targets.tcc_gt,
        })
    }

    pub fn len(&self) -> usize {
        self.thermal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thermal.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.thermal[0].dims()
    }

    pub fn transformed(&self, t: &Transform) -> Self {
        let map = |v: &[Raster]| v.iter().map(|r| t.apply(r)).collect();
        Self {
            thermal: map(&self.thermal),
            events: map(&self.events),
            masks: map(&self.masks),
            sis_gt: map(&self.sis_gt),
            tcc_gt: map(&self.tcc_gt),
        }
    }
}

/// Network inputs and targets of a batch of equally sized samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub batch: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// `[B·T, 1, H, W]`, sample-major.
    pub events: Tensor,
    pub thermal: Tensor,
    /// Per frame, `[B, 1, H, W]`.
    pub sis_gt: Vec<Tensor>,
    pub masks: Vec<Tensor>,
    /// Temporal target of the last frame, `[B, 1, H, W]`.
    pub tcc_gt: Tensor,
}

fn planes(rasters: impl Iterator<Item = Raster>) -> Vec<f64> {
    rasters.flat_map(Raster::into_vec).collect()
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Dataset("empty batch".into()))?;
        let (w, h) = first.dims();
        let t = first.len();
        for s in samples {
            if s.len() != t || s.dims() != (w, h) {
                return Err(Error::Dataset("samples of a batch differ in shape".into()));
            }
        }
        let b = samples.len();
        let all = |f: fn(&Sample) -> &Vec<Raster>| planes(samples.iter().flat_map(|s| f(s).iter().cloned()));
        let per_frame = |f: fn(&Sample) -> &Vec<Raster>| -> Result<Vec<Tensor>> {
            (0..t)
                .map(|k| Tensor::new(&[b, 1, h, w], planes(samples.iter().map(|s| f(s)[k].clone()))).map_err(Error::from))
                .collect()
        };
        Ok(Self {
            batch: b,
            frames: t,
            height: h,
            width: w,
            events: Tensor::new(&[b * t, 1, h, w], all(|s| &s.events))?,
            thermal: Tensor::new(&[b * t, 1, h, w], all(|s| &s.thermal))?,
            sis_gt: per_frame(|s| &s.sis_gt)?,
            masks: per_frame(|s| &s.masks)?,
            tcc_gt: Tensor::new(&[b, 1, h, w], planes(samples.iter().map(|s| s.tcc_gt[t - 1].clone())))?,
        })
    }
}

/// Forward pass of both networks and the total objective: spatial terms
/// for every frame, the temporal term for the last one.
pub fn batch_objective(
    p: &Bindings,
    sis_cfg: &SisConfig,
    tcc_cfg: &TccConfig,
    weights: &LossWeights,
    extractor: &PerceptualExtractor,
    batch: &Batch,
) -> Result<(Var, LossReport)> {
    let (b, t, h, w) = (batch.batch, batch.frames, batch.height, batch.width);
    if tcc_cfg.frames > t {
        return Err(Error::Config(format!("TCC needs {} frames, batch has {t}", tcc_cfg.frames)));
    }
    let y = sis_forward(
        p,
        &Var::constant(batch.events.clone()),
        &Var::constant(batch.thermal.clone()),
        sis_cfg,
    )?;
    let y = reshape(&y, &[b, t, h, w])?;
    let mut volume = narrow(&y, 1, t - tcc_cfg.frames, tcc_cfg.frames)?;
    if tcc_cfg.detach_sis {
        volume = volume.detach();
    }
    let refined = tcc_forward(p, &volume, tcc_cfg)?;
    let mut terms = Vec::with_capacity(t);
    for k in 0..t {
        let yk = narrow(&y, 1, k, 1)?;
        let gk = Var::constant(batch.sis_gt[k].clone());
        let l_tcc = if k + 1 == t {
            Some(l_tcc(&refined, &Var::constant(batch.tcc_gt.clone()))?)
        } else {
            None
        };
        terms.push(FrameTerms {
            l_sis: l_sis(&yk, &gk)?,
            l_tcc,
            l_per: l_perceptual(&yk, &gk, &batch.masks[k], extractor)?,
            l_grad: l_gradient(&yk, &gk)?,
        });
    }
    Ok(combine(&terms, weights)?)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub rows: Vec<LossRow>,
    /// Learning rate used at each step.
    pub lrs: Vec<f64>,
    pub epochs: usize,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Number of optimizer steps a run takes over `groups` groups.
pub fn total_steps(cfg: &Config, groups: usize) -> usize {
    let per_epoch = groups.div_ceil(cfg.train.batch);
    cfg.train.max_steps.unwrap_or(cfg.train.epochs * per_epoch)
}

/// Trains on `groups`, building missing pseudo ground truth first. Writes
/// the loss log and checkpoints into `out_dir`.
pub fn train(ds: &SceneDataset, groups: &[GroupRef], cfg: &Config, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(Error::Dataset("no training groups".into()));
    }
    let tc = &cfg.train;
    std::fs::create_dir_all(out_dir)?;
    let cache = build_cache(ds, groups, &PseudoGtParams::default())?;
    log::info!(
        "pseudo ground truth: {} files written, {} groups already cached",
        cache.files_written,
        cache.groups_skipped
    );

    let mut model = Model::init(cfg.sis, cfg.tcc.clone(), tc.seed)?;
    let mut adam = Adam::new(tc.adam)?;
    let extractor = PerceptualExtractor::default();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let total = total_steps(cfg, groups.len());
    let dims = Sample::load(ds, groups[0])?.dims();
    let crop = crop_size(dims, tc.crop, cfg.size_multiple())?;

    let loss_csv = out_dir.join(LOSS_CSV);
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut log_writer = csv::Writer::from_writer(File::create(&loss_csv)?);
    let mut rows = Vec::with_capacity(total);
    let mut lrs = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut step = 0;
    let mut epoch = 0;
    while step < total {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch) {
            if step >= total {
                break;
            }
            let mut samples = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = Sample::load(ds, groups[i])?;
                if s.dims() != dims {
                    return Err(Error::Dataset(format!(
                        "group {:?} has frames of {:?}, expected {dims:?}",
                        groups[i],
                        s.dims()
                    )));
                }
                let t = sample_transform(&mut rng, dims, crop, tc.augment);
                samples.push(s.transformed(&t));
            }
            let batch = Batch::from_samples(&samples)?;
            let bindings = model.params.bind();
            let (objective, report) = batch_objective(&bindings, &cfg.sis, &cfg.tcc, &cfg.losses, &extractor, &batch)?;
            let value = objective.value().item();
            if !value.is_finite() {
                return Err(Error::Divergence { step, total: value });
            }
            objective.backward();
            let lr = linear_lr(tc.lr_start, tc.lr_end, step, total);
            adam.step(&mut model.params, &bindings.grads(), lr)?;
            let row = LossRow {
                step,
                l_sis: report.l_sis,
                l_tcc: report.l_tcc,
                l_per: report.l_per,
                l_grad: report.l_grad,
                total: report.total,
            };
            log_writer.serialize(&row)?;
            log_writer.flush()?;
            if step % 10 == 0 {
                log::info!("step {step}/{total} epoch {epoch} lr {lr:.3e} total {:.6}", row.total);
            }
            rows.push(row);
            lrs.push(lr);
            step += 1;
        }
        epoch += 1;
        if tc.checkpoint_every_epochs > 0 && epoch % tc.checkpoint_every_epochs == 0 {
            model.save(&checkpoint, step, epoch, tc.seed)?;
        }
    }
    model.save(&checkpoint, step, epoch, tc.seed)?;
    Ok(TrainOutcome {
        model,
        rows,
        lrs,
        epochs: epoch,
        checkpoint,
        loss_csv,
    })
}

/// Reads a loss log written by [`train`].
pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean of the first `window` totals.
pub fn leading_mean(rows: &[LossRow], window: usize) -> f64 {
    let n = window.min(rows.len()).max(1);
    rows.iter().take(n).map(|r| r.total).sum::<f64>() / n as f64
}
