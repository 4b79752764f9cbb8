//! Robust homography estimation between frames: corner features, RANSAC
//! consensus, a least-squares refit on the inliers and an optional
//! photometric Gauss-Newton polish.

use nalgebra::{Matrix3, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{extract_features, match_features, Feature, FeatureParams, MatchParams};
use super::homography::{spread_ratio, Homography};
use crate::error::{Error, Result};
use crate::raster::{gradients, Raster};

#[derive(Clone, Debug)]
pub struct MotionParams {
    pub features: FeatureParams,
    /// Frames with fewer detectable corners are rejected.
    pub min_corners: usize,
    /// Consensus threshold in pixels.
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub min_inliers: usize,
    /// Inlier reprojection RMS above this is an error.
    pub max_rms: f64,
    pub ratio: f64,
    /// Search radius for frame-to-frame matching; `None` searches everywhere.
    pub max_displacement: Option<f64>,
    pub photometric_refine: bool,
    pub seed: u64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            features: FeatureParams::default(),
            min_corners: 20,
            ransac_threshold: 1.5,
            ransac_iterations: 2000,
            min_inliers: 12,
            max_rms: 1.0,
            ratio: 0.8,
            max_displacement: Some(48.0),
            photometric_refine: true,
            seed: 0x5eed_0f_1a,
        }
    }
}

/// Outcome of a robust fit.
#[derive(Clone, Debug)]
pub struct RobustFit {
    pub homography: Homography,
    pub inliers: Vec<usize>,
    pub rms: f64,
}

fn transfer_error(h: &Homography, s: (f64, f64), d: (f64, f64)) -> f64 {
    match h.apply(s.0, s.1) {
        Some((x, y)) => ((x - d.0).powi(2) + (y - d.1).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

fn inliers_of(h: &Homography, src: &[(f64, f64)], dst: &[(f64, f64)], thresh: f64) -> Vec<usize> {
    (0..src.len())
        .filter(|&i| transfer_error(h, src[i], dst[i]) < thresh)
        .collect()
}

fn rms_of(h: &Homography, src: &[(f64, f64)], dst: &[(f64, f64)], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::INFINITY;
    }
    let ss: f64 = idx
        .iter()
        .map(|&i| transfer_error(h, src[i], dst[i]).powi(2))
        .sum();
    (ss / idx.len() as f64).sqrt()
}

/// RANSAC over 4-point samples followed by iterated least-squares refits.
pub fn ransac_homography(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    threshold: f64,
    iterations: usize,
    min_inliers: usize,
    seed: u64,
) -> Result<RobustFit> {
    let n = src.len();
    if n < min_inliers.max(4) {
        return Err(Error::InsufficientFeatures {
            found: n,
            required: min_inliers.max(4),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = iterations;
    let mut it = 0;
    while it < needed.min(iterations) {
        it += 1;
        let mut sample = [0usize; 4];
        for k in 0..4 {
            loop {
                let c = rng.gen_range(0..n);
                if !sample[..k].contains(&c) {
                    sample[k] = c;
                    break;
                }
            }
        }
        let s: Vec<_> = sample.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = sample.iter().map(|&i| dst[i]).collect();
        let Ok(h) = Homography::fit(&s, &d) else {
            continue;
        };
        let inl = inliers_of(&h, src, dst, threshold);
        if inl.len() > best.len() {
            best = inl;
            let w = best.len() as f64 / n as f64;
            let p_fail = 1.0 - w.powi(4);
            if p_fail <= 1e-12 {
                needed = it;
            } else {
                let k = ((1.0 - 0.999f64).ln() / p_fail.ln()).ceil();
                if k.is_finite() && k >= 0.0 {
                    needed = needed.min(k as usize + 20);
                }
            }
        }
    }
    if best.len() < min_inliers {
        return Err(Error::InsufficientFeatures {
            found: best.len(),
            required: min_inliers,
        });
    }
    let mut h = fit_subset(src, dst, &best)?;
    for _ in 0..4 {
        let inl = inliers_of(&h, src, dst, threshold);
        if inl.len() < min_inliers {
            break;
        }
        let refit = fit_subset(src, dst, &inl)?;
        let same = inl == best;
        best = inl;
        h = refit;
        if same {
            break;
        }
    }
    let pts: Vec<_> = best.iter().map(|&i| src[i]).collect();
    if spread_ratio(&pts) < 0.02 {
        return Err(Error::DegenerateGeometry(
            "inlier set is (nearly) collinear".into(),
        ));
    }
    let rms = rms_of(&h, src, dst, &best);
    Ok(RobustFit {
        homography: h,
        inliers: best,
        rms,
    })
}

fn fit_subset(src: &[(f64, f64)], dst: &[(f64, f64)], idx: &[usize]) -> Result<Homography> {
    let s: Vec<_> = idx.iter().map(|&i| src[i]).collect();
    let d: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
    Homography::fit(&s, &d)
}

fn correspondences(a: &[Feature], b: &[Feature], m: &[(usize, usize)]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    m.iter()
        .map(|&(i, j)| ((a[i].x, a[i].y), (b[j].x, b[j].y)))
        .unzip()
}

/// Estimates the homography mapping `frame_prev` pixel coordinates onto
/// `frame_cur`.
pub fn estimate_thermal_motion(
    frame_prev: &Raster,
    frame_cur: &Raster,
    params: &MotionParams,
) -> Result<Homography> {
    frame_prev.ensure_same_dims(frame_cur)?;
    let fa = extract_features(frame_prev, &params.features);
    let fb = extract_features(frame_cur, &params.features);
    let found = fa.len().min(fb.len());
    if found < params.min_corners {
        return Err(Error::InsufficientFeatures {
            found,
            required: params.min_corners,
        });
    }
    if frame_prev == frame_cur {
        return Ok(Homography::identity());
    }
    let matches = match_features(
        &fa,
        &fb,
        &MatchParams {
            ratio: params.ratio,
            max_displacement: params.max_displacement,
        },
    );
    let (src, dst) = correspondences(&fa, &fb, &matches);
    let fit = ransac_homography(
        &src,
        &dst,
        params.ransac_threshold,
        params.ransac_iterations,
        params.min_inliers,
        params.seed,
    )?;
    let mut h = fit.homography;
    if params.photometric_refine {
        if let Some(refined) = refine_photometric(frame_prev, frame_cur, &h, params.features.smoothing_sigma) {
            let (w, hgt) = frame_prev.dims();
            if refined.corner_transfer_error(&h, w as f64, hgt as f64) < 2.0 {
                h = refined;
            }
        }
    }
    let rms = rms_of(&h, &src, &dst, &fit.inliers);
    if rms > params.max_rms {
        return Err(Error::ReprojectionTooLarge {
            rms,
            limit: params.max_rms,
        });
    }
    log::debug!(
        "thermal motion: {} matches, {} inliers, rms {:.3}",
        matches.len(),
        fit.inliers.len(),
        rms
    );
    Ok(h)
}

/// Gauss-Newton / Levenberg-Marquardt minimisation of
/// `Σ (cur(H·x) − prev(x))²` over the eight homography parameters, starting
/// from `init`. Returns `None` when no improvement is found.
pub fn refine_photometric(prev: &Raster, cur: &Raster, init: &Homography, sigma: f64) -> Option<Homography> {
    let t = prev.gaussian_blur(sigma);
    let img = cur.gaussian_blur(sigma);
    let (gx, gy) = gradients(&img);
    let (w, h) = t.dims();
    // normalized coordinates: p = (x - c) / s
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let s = (w.max(h) as f64) / 2.0;
    let norm = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);
    let denorm = norm.try_inverse()?;
    let g0 = norm * init.matrix() * denorm;
    let g0 = g0 / g0[(2, 2)];
    let mut g = SVector::<f64, 8>::from_column_slice(&[
        g0[(0, 0)],
        g0[(0, 1)],
        g0[(0, 2)],
        g0[(1, 0)],
        g0[(1, 1)],
        g0[(1, 2)],
        g0[(2, 0)],
        g0[(2, 1)],
    ]);

    let margin = 2usize;
    let stride = ((w * h) as f64 / 40_000.0).sqrt().ceil().max(1.0) as usize;
    let mut samples = Vec::new();
    for y in (margin..h.saturating_sub(margin)).step_by(stride) {
        for x in (margin..w.saturating_sub(margin)).step_by(stride) {
            samples.push((x, y));
        }
    }
    if samples.len() < 16 {
        return None;
    }

    let eval = |g: &SVector<f64, 8>, want_jac: bool| -> (f64, usize, SMatrix<f64, 8, 8>, SVector<f64, 8>) {
        let mut cost = 0.0;
        let mut count = 0usize;
        let mut jtj = SMatrix::<f64, 8, 8>::zeros();
        let mut jtr = SVector::<f64, 8>::zeros();
        for &(x, y) in &samples {
            let px = (x as f64 - cx) / s;
            let py = (y as f64 - cy) / s;
            let d = g[6] * px + g[7] * py + 1.0;
            if d.abs() < 1e-9 {
                continue;
            }
            let u = (g[0] * px + g[1] * py + g[2]) / d;
            let v = (g[3] * px + g[4] * py + g[5]) / d;
            let (ix, iy) = (u * s + cx, v * s + cy);
            if ix < 0.0 || iy < 0.0 || ix > (w - 1) as f64 || iy > (h - 1) as f64 {
                continue;
            }
            let r = img.sample_clamped(ix, iy) - t.get(x, y);
            cost += r * r;
            count += 1;
            if want_jac {
                let (dx, dy) = (gx.sample_clamped(ix, iy) * s, gy.sample_clamped(ix, iy) * s);
                let j = SVector::<f64, 8>::from_column_slice(&[
                    dx * px / d,
                    dx * py / d,
                    dx / d,
                    dy * px / d,
                    dy * py / d,
                    dy / d,
                    -(dx * u + dy * v) * px / d,
                    -(dx * u + dy * v) * py / d,
                ]);
                jtj += j * j.transpose();
                jtr += j * r;
            }
        }
        (cost, count, jtj, jtr)
    };

    let (mut cost, mut count, mut jtj, mut jtr) = eval(&g, true);
    if count < 16 {
        return None;
    }
    let initial = cost / count as f64;
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut a = jtj;
        for k in 0..8 {
            a[(k, k)] *= 1.0 + lambda;
            a[(k, k)] += 1e-12;
        }
        let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
            lambda *= 10.0;
            continue;
        };
        let cand = g + step;
        let (c2, n2, j2, r2) = eval(&cand, true);
        if n2 >= 16 && c2 / n2 as f64 <= cost / count as f64 {
            let converged = step.norm() < 1e-10;
            g = cand;
            cost = c2;
            count = n2;
            jtj = j2;
            jtr = r2;
            lambda = (lambda * 0.3).max(1e-9);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    if cost / count as f64 >= initial {
        return None;
    }
    let gm = Matrix3::new(g[0], g[1], g[2], g[3], g[4], g[5], g[6], g[7], 1.0);
    Homography::new(denorm * gm * norm).ok()
}

/// Candidate relative scales searched when registering two modalities.
fn registration_scales() -> Vec<f64> {
    (-24..=10).map(|k| 1.05f64.powi(k)).collect()
}

/// Registers an event-camera grayscale frame against a thermal frame; the
/// result maps event pixels into thermal pixel coordinates.
pub fn register_modalities(ev_gray: &Raster, ir_frame: &Raster, params: &MotionParams) -> Result<Homography> {
    let fe = extract_features(ev_gray, &params.features);
    if fe.len() < params.min_corners {
        return Err(Error::InsufficientFeatures {
            found: fe.len(),
            required: params.min_corners,
        });
    }
    if ev_gray == ir_frame {
        return Ok(Homography::identity());
    }
    let (wi, hi) = ir_frame.dims();
    let match_params = MatchParams {
        ratio: params.ratio,
        max_displacement: None,
    };
    let mut best: Option<(usize, Vec<(f64, f64)>, Vec<(f64, f64)>)> = None;
    for s in registration_scales() {
        let ws = (wi as f64 * s).round() as usize;
        let hs = (hi as f64 * s).round() as usize;
        if ws < 16 || hs < 16 {
            continue;
        }
        let resized = if ws == wi && hs == hi {
            ir_frame.clone()
        } else {
            ir_frame.resize_bilinear(ws, hs)
        };
        let fi = extract_features(&resized, &params.features);
        if fi.len() < params.min_inliers {
            continue;
        }
        let m = match_features(&fe, &fi, &match_params);
        let (src, dst) = correspondences(&fe, &fi, &m);
        let Ok(fit) = ransac_homography(
            &src,
            &dst,
            params.ransac_threshold,
            params.ransac_iterations,
            params.min_inliers,
            params.seed,
        ) else {
            continue;
        };
        if best.as_ref().map_or(true, |b| fit.inliers.len() > b.0) {
            // back to full-resolution thermal coordinates
            let (sx, sy) = (wi as f64 / ws as f64, hi as f64 / hs as f64);
            let src_in: Vec<_> = fit.inliers.iter().map(|&i| src[i]).collect();
            let dst_in: Vec<_> = fit
                .inliers
                .iter()
                .map(|&i| ((dst[i].0 + 0.5) * sx - 0.5, (dst[i].1 + 0.5) * sy - 0.5))
                .collect();
            best = Some((fit.inliers.len(), src_in, dst_in));
        }
    }
    let Some((count, src, dst)) = best else {
        return Err(Error::InsufficientFeatures {
            found: 0,
            required: params.min_inliers,
        });
    };
    if count < params.min_inliers {
        return Err(Error::InsufficientFeatures {
            found: count,
            required: params.min_inliers,
        });
    }
    // threshold scaled generously: dst points now live at thermal resolution
    let fit = ransac_homography(
        &src,
        &dst,
        params.ransac_threshold * 2.0,
        params.ransac_iterations,
        params.min_inliers,
        params.seed,
    )?;
    Ok(fit.homography)
}
