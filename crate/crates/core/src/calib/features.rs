//! Harris corners with sub-pixel refinement, normalized patch descriptors and
//! mutual ratio-test matching.

use crate::raster::{gradients, Raster};

#[derive(Clone, Debug)]
pub struct FeatureParams {
    /// Pre-smoothing applied before gradients and descriptor sampling.
    pub smoothing_sigma: f64,
    /// Integration scale of the structure tensor.
    pub integration_sigma: f64,
    pub harris_k: f64,
    /// Responses below `relative_threshold × max` are discarded.
    pub relative_threshold: f64,
    pub nms_radius: usize,
    pub max_corners: usize,
    /// Half-size of the square descriptor patch.
    pub patch_radius: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            smoothing_sigma: 1.0,
            integration_sigma: 1.5,
            harris_k: 0.04,
            relative_threshold: 0.01,
            nms_radius: 3,
            max_corners: 400,
            patch_radius: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
    pub response: f64,
}

#[derive(Clone, Debug)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    /// Zero-mean, unit-norm patch.
    pub descriptor: Vec<f64>,
}

/// Harris response map of an already smoothed image.
pub fn harris_response(smoothed: &Raster, integration_sigma: f64, k: f64) -> Raster {
    let (gx, gy) = gradients(smoothed);
    let (w, h) = smoothed.dims();
    let mut ixx = Raster::zeros(w, h);
    let mut iyy = Raster::zeros(w, h);
    let mut ixy = Raster::zeros(w, h);
    for i in 0..w * h {
        let (a, b) = (gx.data()[i], gy.data()[i]);
        ixx.data_mut()[i] = a * a;
        iyy.data_mut()[i] = b * b;
        ixy.data_mut()[i] = a * b;
    }
    let (ixx, iyy, ixy) = (
        ixx.gaussian_blur(integration_sigma),
        iyy.gaussian_blur(integration_sigma),
        ixy.gaussian_blur(integration_sigma),
    );
    let mut out = Raster::zeros(w, h);
    for i in 0..w * h {
        let (a, b, c) = (ixx.data()[i], iyy.data()[i], ixy.data()[i]);
        let tr = a + b;
        out.data_mut()[i] = a * b - c * c - k * tr * tr;
    }
    out
}

/// Detects corners in `img`, strongest first. `margin` keeps corners away
/// from the border.
pub fn detect_corners(img: &Raster, params: &FeatureParams, margin: usize) -> Vec<Corner> {
    let smoothed = img.gaussian_blur(params.smoothing_sigma);
    detect_corners_smoothed(&smoothed, params, margin)
}

fn detect_corners_smoothed(smoothed: &Raster, params: &FeatureParams, margin: usize) -> Vec<Corner> {
    let resp = harris_response(smoothed, params.integration_sigma, params.harris_k);
    let (w, h) = resp.dims();
    let max = resp.data().iter().cloned().fold(0.0, f64::max);
    if max <= 1e-14 {
        return Vec::new();
    }
    let thresh = max * params.relative_threshold;
    let r = params.nms_radius as isize;
    let margin = margin.max(1);
    let mut corners = Vec::new();
    if w <= 2 * margin || h <= 2 * margin {
        return corners;
    }
    for y in margin..h - margin {
        for x in margin..w - margin {
            let v = resp.get(x, y);
            if v <= thresh {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = resp.get(nx as usize, ny as usize);
                    // ties resolved towards the earlier raster position
                    let earlier = (dy, dx) < (0, 0);
                    if n > v || (n == v && earlier) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let (sx, sy) = subpixel_offset(&resp, x, y);
            corners.push(Corner {
                x: x as f64 + sx,
                y: y as f64 + sy,
                response: v,
            });
        }
    }
    corners.sort_by(|a, b| b.response.total_cmp(&a.response));
    corners.truncate(params.max_corners);
    corners
}

fn subpixel_offset(resp: &Raster, x: usize, y: usize) -> (f64, f64) {
    let c = resp.get(x, y);
    let fit = |m: f64, p: f64| {
        let denom = m - 2.0 * c + p;
        if denom.abs() < 1e-300 {
            0.0
        } else {
            (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
        }
    };
    (
        fit(resp.get(x - 1, y), resp.get(x + 1, y)),
        fit(resp.get(x, y - 1), resp.get(x, y + 1)),
    )
}

/// Detects corners and describes each with a normalized patch.
pub fn extract_features(img: &Raster, params: &FeatureParams) -> Vec<Feature> {
    let smoothed = img.gaussian_blur(params.smoothing_sigma);
    let margin = params.patch_radius + 2;
    detect_corners_smoothed(&smoothed, params, margin)
        .into_iter()
        .filter_map(|c| {
            describe(&smoothed, c.x, c.y, params.patch_radius).map(|descriptor| Feature {
                x: c.x,
                y: c.y,
                descriptor,
            })
        })
        .collect()
}

fn describe(img: &Raster, x: f64, y: f64, radius: usize) -> Option<Vec<f64>> {
    let r = radius as isize;
    let mut d = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            d.push(img.sample_clamped(x + dx as f64, y + dy as f64));
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

#[derive(Clone, Copy, Debug)]
pub struct MatchParams {
    /// Lowe ratio on descriptor distances.
    pub ratio: f64,
    /// Restricts candidates to this pixel distance when set.
    pub max_displacement: Option<f64>,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            max_displacement: None,
        }
    }
}

/// Mutual nearest-neighbour matches passing the ratio test, as index pairs.
pub fn match_features(a: &[Feature], b: &[Feature], params: &MatchParams) -> Vec<(usize, usize)> {
    let best = |from: &[Feature], to: &[Feature], i: usize| -> Option<(usize, f64, f64)> {
        let f = &from[i];
        let mut first = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (j, g) in to.iter().enumerate() {
            if let Some(maxd) = params.max_displacement {
                let dd = (f.x - g.x).powi(2) + (f.y - g.y).powi(2);
                if dd > maxd * maxd {
                    continue;
                }
            }
            let dist: f64 = f
                .descriptor
                .iter()
                .zip(&g.descriptor)
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            if dist < first.1 {
                second = first.1;
                first = (j, dist);
            } else if dist < second {
                second = dist;
            }
        }
        (first.0 != usize::MAX).then_some((first.0, first.1, second))
    };
    let mut out = Vec::new();
    for i in 0..a.len() {
        let Some((j, d1, d2)) = best(a, b, i) else {
            continue;
        };
        if d2.is_finite() && d1 > params.ratio * params.ratio * d2 {
            continue;
        }
        if let Some((back, _, _)) = best(b, a, j) {
            if back == i {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks() -> Raster {
        Raster::from_fn(64, 64, |x, y| {
            if (16..40).contains(&x) && (20..44).contains(&y) {
                0.8
            } else {
                0.1
            }
        })
    }

    #[test]
    fn finds_rectangle_corners() {
        let corners = detect_corners(&blocks(), &FeatureParams::default(), 3);
        assert!(corners.len() >= 4);
        for &(cx, cy) in &[(16.0, 20.0), (39.0, 20.0), (16.0, 43.0), (39.0, 43.0)] {
            assert!(corners
                .iter()
                .any(|c| (c.x - cx).abs() < 2.0 && (c.y - cy).abs() < 2.0));
        }
    }

    #[test]
    fn constant_image_has_no_corners() {
        assert!(detect_corners(&Raster::filled(32, 32, 0.5), &FeatureParams::default(), 3).is_empty());
    }

    #[test]
    fn self_matching_is_identity() {
        let f = extract_features(&blocks(), &FeatureParams::default());
        let m = match_features(&f, &f, &MatchParams::default());
        assert!(!m.is_empty());
        assert!(m.iter().all(|(i, j)| i == j));
    }
}
