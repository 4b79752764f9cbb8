//! Write-once pseudo ground-truth cache, one 8-bit PNG per frame and kind.
//!
//! Masks and spatial targets depend only on their own frame. The temporal
//! target of a frame depends on its group; with overlapping groups the
//! first group (in dataset order) containing the frame defines it.

use uta_core::par;
use uta_core::pseudo_gt::{build_group_targets, RegionParams, TccParams};
use uta_core::Raster;

use crate::dataset::{GroupRef, SceneDataset};
use crate::error::{Error, Result};
use crate::scene::{MASKS_DIR, SIS_GT_DIR, TCC_GT_DIR};

/// Groups whose targets are computed concurrently before being written.
const BUILD_CHUNK: usize = 16;

#[derive(Clone, Debug, Default)]
pub struct PseudoGtParams {
    pub region: RegionParams,
    pub tcc: TccParams,
}

/// Per-frame targets of one group, in thermal pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupTargetFrames {
    pub masks: Vec<Raster>,
    pub sis_gt: Vec<Raster>,
    pub tcc_gt: Vec<Raster>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheReport {
    pub files_written: usize,
    pub groups_skipped: usize,
}

fn kinds() -> [&'static str; 3] {
    [MASKS_DIR, SIS_GT_DIR, TCC_GT_DIR]
}

fn is_cached(ds: &SceneDataset, g: GroupRef) -> bool {
    let dir = &ds.scenes[g.scene].dir;
    (g.start..g.start + g.len).all(|k| kinds().iter().all(|kind| dir.cache_path(kind, k).is_file()))
}

fn compute(ds: &SceneDataset, g: GroupRef, params: &PseudoGtParams) -> Result<GroupTargetFrames> {
    let frames = ds.load_group(g)?;
    let rig = &ds.scenes[g.scene].rig;
    let t = build_group_targets(&frames.events, &frames.thermal, rig, &params.region, &params.tcc)?;
    Ok(GroupTargetFrames {
        masks: t.masks.into_iter().map(|m| m.pixels).collect(),
        sis_gt: t.sis_gt,
        tcc_gt: t.tcc_gt,
    })
}

fn write_missing(ds: &SceneDataset, g: GroupRef, targets: &GroupTargetFrames) -> Result<usize> {
    let dir = &ds.scenes[g.scene].dir;
    let mut written = 0;
    for (kind, rasters) in kinds().into_iter().zip([&targets.masks, &targets.sis_gt, &targets.tcc_gt]) {
        std::fs::create_dir_all(dir.root().join(kind))?;
        for (offset, r) in rasters.iter().enumerate() {
            let path = dir.cache_path(kind, g.start + offset);
            if !path.exists() {
                r.save_png(&path)?;
                written += 1;
            }
        }
    }
    Ok(written)
}

/// Builds the cache for `groups`; files that already exist are kept.
pub fn build_cache(ds: &SceneDataset, groups: &[GroupRef], params: &PseudoGtParams) -> Result<CacheReport> {
    let mut report = CacheReport::default();
    let todo: Vec<GroupRef> = groups.iter().copied().filter(|&g| !is_cached(ds, g)).collect();
    report.groups_skipped = groups.len() - todo.len();
    for chunk in todo.chunks(BUILD_CHUNK) {
        let built = par::map_slice(chunk, |&g| compute(ds, g, params));
        for (&g, targets) in chunk.iter().zip(built) {
            report.files_written += write_missing(ds, g, &targets?)?;
        }
    }
    Ok(report)
}

/// Reads the cached targets of a group.
pub fn load_cached(ds: &SceneDataset, g: GroupRef) -> Result<GroupTargetFrames> {
    let dir = &ds.scenes[g.scene].dir;
    let read = |kind: &str| -> Result<Vec<Raster>> {
        (g.start..g.start + g.len)
            .map(|k| {
                let path = dir.cache_path(kind, k);
                if !path.is_file() {
                    return Err(Error::Dataset(format!("{} is not cached", path.display())));
                }
                Ok(Raster::load_gray(path)?)
            })
            .collect()
    };
    Ok(GroupTargetFrames {
        masks: read(MASKS_DIR)?,
        sis_gt: read(SIS_GT_DIR)?,
        tcc_gt: read(TCC_GT_DIR)?,
    })
}
