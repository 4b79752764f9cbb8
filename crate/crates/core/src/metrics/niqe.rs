//! Natural image quality evaluator: a multivariate Gaussian over
//! natural-scene-statistics features of sharp pristine patches, compared with
//! the Gaussian fitted to a test image's patches.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::simgen::scene::pristine_corpus;

pub const NIQE_MAGIC: &[u8; 15] = b"UTASIGN-NIQE-v1";
/// 18 statistics at each of two scales.
pub const NIQE_FEATURES: usize = 36;

const DEFAULT_PATCH: usize = 32;
const DEFAULT_SHARPNESS_FRACTION: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct NiqeModel {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub patch_size: usize,
    /// Pristine patches sharper than this fraction of the sharpest one are
    /// used for fitting.
    pub sharpness_fraction: f64,
}

struct Gammas {
    grid: Vec<f64>,
    ggd_ratio: Vec<f64>,
    aggd_ratio: Vec<f64>,
}

fn gammas() -> &'static Gammas {
    static TABLE: OnceLock<Gammas> = OnceLock::new();
    TABLE.get_or_init(|| {
        let grid: Vec<f64> = (0..=9800).map(|i| 0.2 + 0.001 * i as f64).collect();
        let g = libm::tgamma;
        let ggd_ratio = grid.iter().map(|&a| g(1.0 / a) * g(3.0 / a) / g(2.0 / a).powi(2)).collect();
        let aggd_ratio = grid.iter().map(|&a| g(2.0 / a).powi(2) / (g(1.0 / a) * g(3.0 / a))).collect();
        Gammas {
            grid,
            ggd_ratio,
            aggd_ratio,
        }
    })
}

fn nearest(grid: &[f64], table: &[f64], target: f64) -> f64 {
    if !target.is_finite() {
        return *grid.last().expect("non-empty grid");
    }
    let mut best = 0;
    let mut err = f64::INFINITY;
    for (i, &r) in table.iter().enumerate() {
        let e = (r - target).abs();
        if e < err {
            err = e;
            best = i;
        }
    }
    grid[best]
}

/// Generalized Gaussian shape and variance.
fn fit_ggd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sigma_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let e_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if e_abs <= 1e-300 {
        return (*gammas().grid.last().expect("grid"), 0.0);
    }
    let rho = sigma_sq / (e_abs * e_abs);
    let t = gammas();
    (nearest(&t.grid, &t.ggd_ratio, rho), sigma_sq)
}

/// Asymmetric generalized Gaussian: shape, mean, left and right variances.
fn fit_aggd(x: &[f64]) -> [f64; 4] {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    let t = gammas();
    let left = if ln > 0 { (ls / ln as f64).sqrt() } else { 0.0 };
    let right = if rn > 0 { (rs / rn as f64).sqrt() } else { 0.0 };
    if left <= 1e-300 || right <= 1e-300 || sq_sum <= 1e-300 {
        return [*t.grid.last().expect("grid"), 0.0, left * left, right * right];
    }
    let n = x.len() as f64;
    let gamma_hat = left / right;
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let r_norm = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0) / (gamma_hat * gamma_hat + 1.0).powi(2);
    let alpha = nearest(&t.grid, &t.aggd_ratio, r_norm);
    let g = libm::tgamma;
    let mean = (right - left) * (g(2.0 / alpha) / g(1.0 / alpha)) * (g(1.0 / alpha) / g(3.0 / alpha)).sqrt();
    [alpha, mean, left * left, right * right]
}

/// Mean-subtracted contrast-normalized coefficients and the local deviation
/// map, on a 0–255 scale.
fn mscn(img: &Raster) -> (Raster, Raster) {
    let scaled = img.map(|v| v * 255.0);
    let mu = gaussian7(&scaled);
    let mu_sq = gaussian7(&scaled.map(|v| v * v));
    let (w, h) = scaled.dims();
    let sigma = Raster::from_fn(w, h, |x, y| (mu_sq.get(x, y) - mu.get(x, y).powi(2)).abs().sqrt());
    let coeffs = Raster::from_fn(w, h, |x, y| (scaled.get(x, y) - mu.get(x, y)) / (sigma.get(x, y) + 1.0));
    (coeffs, sigma)
}

/// 7×7 Gaussian window with σ = 7/6, replicated borders.
fn gaussian7(img: &Raster) -> Raster {
    let sigma = 7.0 / 6.0;
    let k: Vec<f64> = (-3..=3).map(|i: i32| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / s).collect();
    let (w, h) = img.dims();
    let rows = Raster::from_fn(w, h, |x, y| {
        (0..7).map(|i| k[i] * img.get_clamped(x as isize + i as isize - 3, y as isize)).sum()
    });
    Raster::from_fn(w, h, |x, y| {
        (0..7).map(|i| k[i] * rows.get_clamped(x as isize, y as isize + i as isize - 3)).sum()
    })
}

fn patch_features(coeffs: &Raster, x0: usize, y0: usize, p: usize) -> Vec<f64> {
    let at = |x: usize, y: usize| coeffs.get(x0 + x, y0 + y);
    let mut all = Vec::with_capacity(p * p);
    for y in 0..p {
        for x in 0..p {
            all.push(at(x, y));
        }
    }
    let (alpha, var) = fit_ggd(&all);
    let mut out = vec![alpha, var];
    // horizontal, vertical, main and anti diagonal neighbour products
    let shifts: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];
    for (dx, dy) in shifts {
        let mut prods = Vec::with_capacity(p * p);
        for y in 0..p {
            for x in 0..p {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= p as isize || ny >= p as isize {
                    continue;
                }
                prods.push(at(x, y) * at(nx as usize, ny as usize));
            }
        }
        out.extend_from_slice(&fit_aggd(&prods));
    }
    out
}

/// Per-patch 36-dimensional features and per-patch sharpness.
fn image_features(img: &Raster, patch: usize) -> Vec<(Vec<f64>, f64)> {
    let (w, h) = img.dims();
    let (nx, ny) = (w / patch, h / patch);
    if nx == 0 || ny == 0 {
        return Vec::new();
    }
    let img = img.crop(0, 0, nx * patch, ny * patch);
    let (c1, sigma) = mscn(&img);
    let half = img.resize_bilinear(nx * patch / 2, ny * patch / 2);
    let (c2, _) = mscn(&half);
    let p2 = patch / 2;
    let mut out = Vec::with_capacity(nx * ny);
    for py in 0..ny {
        for px in 0..nx {
            let mut f = patch_features(&c1, px * patch, py * patch, patch);
            f.extend(patch_features(&c2, px * p2, py * p2, p2));
            let mut sharp = 0.0;
            for y in 0..patch {
                for x in 0..patch {
                    sharp += sigma.get(px * patch + x, py * patch + y);
                }
            }
            out.push((f, sharp / (patch * patch) as f64));
        }
    }
    out
}

/// NIQE feature vectors of all patches of `img`.
pub fn niqe_features(img: &Raster, patch: usize) -> Vec<Vec<f64>> {
    image_features(img, patch).into_iter().map(|(f, _)| f).collect()
}

fn gaussian_fit(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = NIQE_FEATURES;
    let n = rows.len().max(1) as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    if rows.len() > 1 {
        for r in rows {
            let c = DVector::from_iterator(d, r.iter().zip(mean.iter()).map(|(a, b)| a - b));
            cov += &c * c.transpose();
        }
        cov /= (rows.len() - 1) as f64;
    }
    (mean, cov)
}

impl NiqeModel {
    /// Fits the pristine Gaussian on the sharpest patches of `images`.
    pub fn fit(images: &[Raster], patch_size: usize, sharpness_fraction: f64) -> Result<Self> {
        if patch_size < 4 || patch_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size must be even and at least 4, got {patch_size}"
            )));
        }
        let mut rows = Vec::new();
        for img in images {
            let feats = image_features(img, patch_size);
            let max = feats.iter().map(|(_, s)| *s).fold(0.0, f64::max);
            rows.extend(
                feats
                    .into_iter()
                    .filter(|(_, s)| *s > sharpness_fraction * max)
                    .map(|(f, _)| f),
            );
        }
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "{} sharp pristine patches; need at least 2",
                rows.len()
            )));
        }
        let (mean, covariance) = gaussian_fit(&rows);
        Ok(Self {
            mean,
            covariance,
            patch_size,
            sharpness_fraction,
        })
    }

    /// Model fitted on the built-in procedural pristine corpus.
    pub fn builtin() -> &'static NiqeModel {
        static MODEL: OnceLock<NiqeModel> = OnceLock::new();
        MODEL.get_or_init(|| {
            NiqeModel::fit(&pristine_corpus(24, 128, 0x9e37), DEFAULT_PATCH, DEFAULT_SHARPNESS_FRACTION)
                .expect("procedural corpus yields sharp patches")
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let d = self.mean.len();
        w.write_all(NIQE_MAGIC)?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&(self.patch_size as u32).to_le_bytes())?;
        w.write_all(&self.sharpness_fraction.to_le_bytes())?;
        for v in self.mean.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for r in 0..d {
            for c in 0..d {
                w.write_all(&self.covariance[(r, c)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 15];
        r.read_exact(&mut magic)?;
        if &magic != NIQE_MAGIC {
            return Err(Error::Parse("not a NIQE model file".into()));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u)?;
        let d = u32::from_le_bytes(u) as usize;
        if d != NIQE_FEATURES {
            return Err(Error::Parse(format!("model has {d} features, expected {NIQE_FEATURES}")));
        }
        r.read_exact(&mut u)?;
        let patch_size = u32::from_le_bytes(u) as usize;
        let mut f = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut f)?;
            Ok(f64::from_le_bytes(f))
        };
        let sharpness_fraction = next(&mut r)?;
        let mean = DVector::from_iterator(d, (0..d).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?);
        let cov = (0..d * d).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mean,
            covariance: DMatrix::from_row_slice(d, d, &cov),
            patch_size,
            sharpness_fraction,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&std::fs::read(path)?[..])
    }
}

/// Distance between the test image's patch Gaussian and the pristine model;
/// lower is better. Images with fewer patches than features give a
/// rank-deficient test covariance and noticeably noisier scores.
pub fn niqe(img: &Raster, model: &NiqeModel) -> Result<f64> {
    let rows = niqe_features(img, model.patch_size);
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} is smaller than one {}-pixel patch",
            img.width(),
            img.height(),
            model.patch_size
        )));
    }
    let (mean, cov) = gaussian_fit(&rows);
    let diff = &model.mean - mean;
    let pooled = (&model.covariance + cov) / 2.0;
    let pinv = pooled
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse failed: {e}")))?;
    let q = (diff.transpose() * pinv * &diff)[(0, 0)];
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ggd_recovers_gaussian_shape() {
        // Box-Muller over a deterministic grid
        let n = 20_000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let u1 = (i as f64 + 0.5) / n as f64;
                let u2 = ((i * 7919) % n) as f64 / n as f64;
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let (alpha, _) = fit_ggd(&x);
        assert!((alpha - 2.0).abs() < 0.1, "alpha {alpha}");
    }

    #[test]
    fn model_has_36_dims_and_round_trips() {
        let model = NiqeModel::fit(&pristine_corpus(4, 96, 1), 32, 0.5).unwrap();
        assert_eq!(model.mean.len(), NIQE_FEATURES);
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..15], NIQE_MAGIC);
        assert_eq!(NiqeModel::read_from(&buf[..]).unwrap(), model);
        let min_eig = model.covariance.clone().symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-10);
    }

    #[test]
    fn fit_is_deterministic() {
        let c = pristine_corpus(3, 64, 2);
        assert_eq!(NiqeModel::fit(&c, 16, 0.5).unwrap(), NiqeModel::fit(&c, 16, 0.5).unwrap());
    }
}
