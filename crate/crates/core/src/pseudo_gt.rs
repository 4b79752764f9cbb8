//! Training targets built from the data itself: a mask-composited spatial
//! target and a warp-and-vote temporal target.

use crate::calib::{compose_relative_motion, estimate_thermal_motion, warp_raster, Homography, MotionParams, RigCalibration};
use crate::error::{Error, Result};
use crate::events::{denoise_spatiotemporal, warp_event_frame, EventFrame, SupportRadius};
use crate::par;
use crate::raster::{Raster, ThermalFrame};

/// One connected group of signage pixels, as `(x, y)` coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub pixels: Vec<(usize, usize)>,
}

impl Region {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// `(x0, y0, x1, y1)`, inclusive; `None` for an empty region.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let first = self.pixels.first()?;
        Some(self.pixels.iter().fold(
            (first.0, first.1, first.0, first.1),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        ))
    }

    /// Axis-aligned box region, `x0..x1` × `y0..y1` (exclusive).
    pub fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self {
            pixels: (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).collect(),
        }
    }
}

/// Binary mask equal to the union of its regions.
#[derive(Clone, Debug, PartialEq)]
pub struct SignageMask {
    pub pixels: Raster,
    pub regions: Vec<Region>,
}

impl SignageMask {
    pub fn empty(resolution: (usize, usize)) -> Self {
        Self {
            pixels: Raster::zeros(resolution.0, resolution.1),
            regions: Vec::new(),
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionParams {
    pub min_area: usize,
    /// Side of the square window for local thermal variance.
    pub variance_window: usize,
    pub variance_threshold: f64,
    /// Fraction of a component's pixels that must lie on thermally uniform
    /// ground.
    pub uniform_fraction: f64,
    pub denoise_radius: SupportRadius,
    pub denoise_min_support: usize,
}

impl Default for RegionParams {
    fn default() -> Self {
        Self {
            min_area: 25,
            variance_window: 7,
            variance_threshold: 1e-3,
            uniform_fraction: 0.5,
            denoise_radius: SupportRadius::default(),
            denoise_min_support: 2,
        }
    }
}

/// Population variance over a `window × window` box around each pixel,
/// truncated at the borders.
pub fn local_variance(img: &Raster, window: usize) -> Raster {
    let (w, h) = img.dims();
    let r = window / 2;
    // summed-area tables with a zero row/column in front
    let mut s1 = vec![0.0; (w + 1) * (h + 1)];
    let mut s2 = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let (mut r1, mut r2) = (0.0, 0.0);
        for x in 0..w {
            let v = img.get(x, y);
            r1 += v;
            r2 += v * v;
            let i = (y + 1) * (w + 1) + x + 1;
            s1[i] = s1[i - (w + 1)] + r1;
            s2[i] = s2[i - (w + 1)] + r2;
        }
    }
    Raster::from_fn(w, h, |x, y| {
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
        let n = ((x1 - x0) * (y1 - y0)) as f64;
        let sum = |s: &[f64]| s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0];
        let mean = sum(&s1) / n;
        (sum(&s2) / n - mean * mean).max(0.0)
    })
}

/// 8-connected components of the nonzero pixels, in raster order of their
/// first pixel.
pub fn connected_components(active: &Raster) -> Vec<Region> {
    let (w, h) = active.dims();
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if label[start] || active.data()[start] == 0.0 {
            continue;
        }
        label[start] = true;
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = yy * w + xx;
                    if !label[j] && active.data()[j] != 0.0 {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        pixels.sort_by_key(|&(x, y)| (y, x));
        out.push(Region { pixels });
    }
    out
}

/// Candidate signage regions: clusters of event activity lying mostly on
/// thermally flat ground, where the thermal image cannot show them.
pub fn extract_signage_regions(ev: &Raster, ir: &ThermalFrame, params: &RegionParams) -> Result<Vec<Region>> {
    ev.ensure_same_dims(ir)?;
    let clean = denoise_spatiotemporal(
        std::slice::from_ref(ev),
        params.denoise_radius,
        params.denoise_min_support,
    )?
    .pop()
    .expect("one frame in, one frame out");
    let var = local_variance(ir, params.variance_window);
    Ok(connected_components(&clean)
        .into_iter()
        .filter(|r| r.area() >= params.min_area)
        .filter(|r| {
            let flat = r
                .pixels
                .iter()
                .filter(|&&(x, y)| var.get(x, y) < params.variance_threshold)
                .count();
            flat as f64 >= params.uniform_fraction * r.area() as f64
        })
        .collect())
}

/// Union of `regions` as a binary raster.
pub fn build_mask(regions: Vec<Region>, resolution: (usize, usize)) -> Result<SignageMask> {
    let (w, h) = resolution;
    let mut pixels = Raster::zeros(w, h);
    for r in &regions {
        for &(x, y) in &r.pixels {
            if x >= w || y >= h {
                return Err(Error::OutOfBounds {
                    x: x as i64,
                    y: y as i64,
                    width: w,
                    height: h,
                });
            }
            pixels.set(x, y, 1.0);
        }
    }
    Ok(SignageMask { pixels, regions })
}

/// `M·I_EV + (1 − M)·I_IR` per pixel.
pub fn compose_sis_gt(mask: &SignageMask, i_ev: &Raster, i_ir: &ThermalFrame) -> Result<Raster> {
    mask.pixels.ensure_same_dims(i_ev)?;
    mask.pixels.ensure_same_dims(i_ir)?;
    let data = mask
        .pixels
        .data()
        .iter()
        .zip(i_ev.data())
        .zip(i_ir.data())
        .map(|((&m, &e), &t)| m * e + (1.0 - m) * t)
        .collect();
    Raster::from_vec(i_ir.width(), i_ir.height(), data)
}

/// Temporal target for frame `t_index` of a group.
#[derive(Clone, Debug, PartialEq)]
pub struct TccTarget {
    pub pixels: Raster,
    pub t_index: usize,
    pub group_len: usize,
    pub vote_threshold: f64,
}

#[derive(Clone, Debug)]
pub struct TccParams {
    /// Votes must exceed this; `None` means half the group length.
    pub vote_threshold: Option<f64>,
    /// Support filter applied to the voted frame; `None` disables it.
    pub denoise: Option<(SupportRadius, usize)>,
    pub motion: MotionParams,
}

impl Default for TccParams {
    fn default() -> Self {
        Self {
            vote_threshold: None,
            denoise: Some((SupportRadius::default(), 2)),
            motion: MotionParams::default(),
        }
    }
}

/// Warp-and-vote target: every other frame's events are carried to instant
/// `t_index` along the thermal camera's measured motion (transferred to the
/// event camera through the rig), each frame casts one binary vote per
/// pixel, and pixels with more than the threshold of votes are set.
/// `t_index` is zero-based.
pub fn build_tcc_gt(
    ev_frames: &[EventFrame],
    ir_frames: &[ThermalFrame],
    rig: &RigCalibration,
    t_index: usize,
    params: &TccParams,
) -> Result<TccTarget> {
    if ev_frames.len() != ir_frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} event frames but {} thermal frames",
            ev_frames.len(),
            ir_frames.len()
        )));
    }
    check_target(ev_frames.len(), t_index)?;
    let motions = par::map_range(ev_frames.len(), |k| -> Result<Homography> {
        if k == t_index {
            return Ok(Homography::identity());
        }
        let h_ir = estimate_thermal_motion(&ir_frames[k], &ir_frames[t_index], &params.motion)?;
        compose_relative_motion(&h_ir, rig)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    build_tcc_gt_with_motion(ev_frames, &motions, t_index, params)
}

/// [`build_tcc_gt`] with known event-camera motions; `motions[k]` carries
/// frame `k` to the target instant (the target's own entry is ignored).
pub fn build_tcc_gt_with_motion(
    ev_frames: &[EventFrame],
    motions: &[Homography],
    t_index: usize,
    params: &TccParams,
) -> Result<TccTarget> {
    check_target(ev_frames.len(), t_index)?;
    if motions.len() != ev_frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} motions for {} frames",
            motions.len(),
            ev_frames.len()
        )));
    }
    let dims = ev_frames[t_index].dims();
    for f in ev_frames {
        if f.dims() != dims {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: f.dims(),
            });
        }
    }
    let n = ev_frames.len();
    let threshold = params.vote_threshold.unwrap_or(n as f64 / 2.0);
    let warped = par::map_range(n, |k| -> Result<Raster> {
        if k == t_index {
            Ok(ev_frames[k].pixels.clone())
        } else {
            Ok(warp_event_frame(&ev_frames[k], &motions[k])?.pixels)
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut votes = vec![0usize; dims.0 * dims.1];
    for f in &warped {
        for (v, &p) in votes.iter_mut().zip(f.data()) {
            *v += usize::from(p > 0.0);
        }
    }
    let voted = Raster::from_vec(
        dims.0,
        dims.1,
        votes.iter().map(|&v| if v as f64 > threshold { 1.0 } else { 0.0 }).collect(),
    )?;
    let pixels = match params.denoise {
        Some((radius, min_support)) => denoise_spatiotemporal(&[voted], radius, min_support)?
            .pop()
            .expect("one frame in, one frame out"),
        None => voted,
    };
    Ok(TccTarget {
        pixels,
        t_index,
        group_len: n,
        vote_threshold: threshold,
    })
}

fn check_target(n: usize, t_index: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InsufficientFrames { found: 0, required: 1 });
    }
    if t_index >= n {
        return Err(Error::InvalidArgument(format!(
            "target index {t_index} outside a group of {n}"
        )));
    }
    Ok(())
}

/// Resamples an event-camera raster into thermal-camera pixel coordinates.
pub fn event_to_thermal(ev: &Raster, rig: &RigCalibration) -> Result<Raster> {
    if ev.dims() != rig.ev_resolution {
        return Err(Error::ShapeMismatch {
            expected: rig.ev_resolution,
            actual: ev.dims(),
        });
    }
    if rig.h_ir_to_ev.is_identity() && rig.ev_resolution == rig.ir_resolution {
        return Ok(ev.clone());
    }
    Ok(warp_raster(ev, &rig.h_ev_to_ir()?, rig.ir_resolution).clip01())
}

/// Per-frame targets of one group, in thermal coordinates.
#[derive(Clone, Debug)]
pub struct GroupTargets {
    pub masks: Vec<SignageMask>,
    pub sis_gt: Vec<Raster>,
    /// Binary temporal target for each frame of the group.
    pub tcc_gt: Vec<Raster>,
}

/// Builds both targets for every frame of a group. The temporal target of
/// frame `t` votes over the whole group with `t` as the reference instant.
pub fn build_group_targets(
    ev_frames: &[EventFrame],
    ir_frames: &[ThermalFrame],
    rig: &RigCalibration,
    region: &RegionParams,
    tcc: &TccParams,
) -> Result<GroupTargets> {
    let n = ev_frames.len();
    let ev_ir = ev_frames
        .iter()
        .map(|e| event_to_thermal(&e.pixels, rig))
        .collect::<Result<Vec<_>>>()?;
    let mut masks = Vec::with_capacity(n);
    let mut sis_gt = Vec::with_capacity(n);
    for (e, t) in ev_ir.iter().zip(ir_frames) {
        let regions = extract_signage_regions(e, t, region)?;
        let m = build_mask(regions, t.dims())?;
        sis_gt.push(compose_sis_gt(&m, e, t)?);
        masks.push(m);
    }
    let motions_ir: Vec<Vec<Homography>> = (0..n)
        .map(|t| {
            (0..n)
                .map(|k| {
                    if k == t {
                        Ok(Homography::identity())
                    } else {
                        estimate_thermal_motion(&ir_frames[k], &ir_frames[t], &tcc.motion)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tcc_gt = Vec::with_capacity(n);
    for (t, row) in motions_ir.iter().enumerate() {
        let ev_motion = row
            .iter()
            .map(|h| compose_relative_motion(h, rig))
            .collect::<Result<Vec<_>>>()?;
        let target = build_tcc_gt_with_motion(ev_frames, &ev_motion, t, tcc)?;
        let in_ir = event_to_thermal(&target.pixels, rig)?;
        tcc_gt.push(in_ir.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }));
    }
    Ok(GroupTargets {
        masks,
        sis_gt,
        tcc_gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(p: Raster) -> EventFrame {
        EventFrame::new(p, 0, 1).unwrap()
    }

    #[test]
    fn empty_events_give_no_regions() {
        let ev = Raster::zeros(32, 32);
        let ir = Raster::filled(32, 32, 0.4);
        assert!(extract_signage_regions(&ev, &ir, &RegionParams::default()).unwrap().is_empty());
    }

    #[test]
    fn blob_on_flat_thermal_is_one_region() {
        let ev = Raster::from_fn(40, 40, |x, y| if (10..18).contains(&x) && (12..20).contains(&y) { 1.0 } else { 0.0 });
        let ir = Raster::filled(40, 40, 0.4);
        let r = extract_signage_regions(&ev, &ir, &RegionParams::default()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area(), 64);
        assert_eq!(r[0].bounding_box(), Some((10, 12, 17, 19)));
    }

    #[test]
    fn blob_on_textured_thermal_is_excluded() {
        let ev = Raster::from_fn(40, 40, |x, y| if (10..18).contains(&x) && (12..20).contains(&y) { 1.0 } else { 0.0 });
        let ir = Raster::from_fn(40, 40, |x, y| if (x + y) % 2 == 0 { 0.1 } else { 0.9 });
        assert!(extract_signage_regions(&ev, &ir, &RegionParams::default()).unwrap().is_empty());
    }

    #[test]
    fn mask_union_area() {
        let m = build_mask(vec![Region::rect(0, 0, 10, 10), Region::rect(5, 5, 15, 15)], (20, 20)).unwrap();
        assert_eq!(m.area(), 175);
        assert!(build_mask(vec![], (4, 4)).unwrap().is_empty());
        assert_eq!(build_mask(vec![Region::rect(0, 0, 4, 4)], (4, 4)).unwrap().area(), 16);
        assert!(build_mask(vec![Region::rect(0, 0, 5, 4)], (4, 4)).is_err());
    }

    #[test]
    fn two_by_two_composition() {
        let m = build_mask(vec![Region { pixels: vec![(0, 0), (1, 1)] }], (2, 2)).unwrap();
        let ev = Raster::filled(2, 2, 0.8);
        let ir = Raster::filled(2, 2, 0.2);
        let g = compose_sis_gt(&m, &ev, &ir).unwrap();
        assert_eq!(g.data(), &[0.8, 0.2, 0.2, 0.8]);
        assert_eq!(compose_sis_gt(&SignageMask::empty((2, 2)), &ev, &ir).unwrap(), ir);
    }

    #[test]
    fn vote_threshold_is_half_the_group() {
        let params = TccParams {
            denoise: None,
            ..TccParams::default()
        };
        let ids = vec![Homography::identity(); 7];
        let mut all = Raster::zeros(8, 8);
        all.set(3, 3, 1.0);
        let frames: Vec<_> = (0..7).map(|_| frame(all.clone())).collect();
        let t = build_tcc_gt_with_motion(&frames, &ids, 6, &params).unwrap();
        assert_eq!(t.pixels.get(3, 3), 1.0);
        assert_eq!(t.vote_threshold, 3.5);
        let mut only_target: Vec<_> = (0..7).map(|_| frame(Raster::zeros(8, 8))).collect();
        only_target[6] = frame(all.clone());
        let t = build_tcc_gt_with_motion(&only_target, &ids, 6, &params).unwrap();
        assert_eq!(t.pixels.get(3, 3), 0.0);
        let single = build_tcc_gt_with_motion(&only_target[6..], &ids[..1], 0, &params).unwrap();
        assert_eq!(single.pixels, all);
    }

    #[test]
    fn static_scene_targets_agree_across_instants() {
        let mut lit = Raster::zeros(12, 12);
        for x in 3..7 {
            for y in 4..6 {
                lit.set(x, y, 0.6);
            }
        }
        let frames: Vec<_> = (0..5).map(|_| frame(lit.clone())).collect();
        let ids = vec![Homography::identity(); 5];
        let first = build_tcc_gt_with_motion(&frames, &ids, 0, &TccParams::default()).unwrap();
        for t in 1..5 {
            let other = build_tcc_gt_with_motion(&frames, &ids, t, &TccParams::default()).unwrap();
            assert_eq!(other.pixels, first.pixels);
        }
        assert!(first.pixels.data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn local_variance_matches_direct_sum() {
        let img = Raster::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 5) as f64 / 4.0);
        let v = local_variance(&img, 7);
        let (x, y) = (4usize, 3usize);
        let vals: Vec<f64> = (0..7).flat_map(|yy| (1..8).map(move |xx| (xx, yy))).map(|(xx, yy)| img.get(xx, yy)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let direct = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((v.get(x, y) - direct).abs() < 1e-12);
    }
}
