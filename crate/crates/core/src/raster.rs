//! Single-channel floating point rasters and the handful of resampling and
//! filtering routines the rest of the crate builds on.

use std::path::Path;

use crate::error::{Error, Result};
use crate::par;

/// Row-major single-channel raster. Values are nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Long-wave infrared intensity frame.
pub type ThermalFrame = Raster;

impl Raster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel value with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn ensure_same_dims(&self, other: &Raster) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_constant(&self) -> bool {
        let (lo, hi) = self.min_max();
        hi - lo <= 0.0
    }

    pub fn clip01(&self) -> Raster {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Bilinear sample at continuous pixel coordinates; `None` outside the
    /// raster (pixel centers sit on integer coordinates).
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let w = self.width as f64;
        let h = self.height as f64;
        if !(x > -1.0 && y > -1.0 && x < w && y < h) {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let tap = |xi: isize, yi: isize| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as isize || yi >= self.height as isize {
                0.0
            } else {
                self.data[yi as usize * self.width + xi as usize]
            }
        };
        if fx == 0.0 && fy == 0.0 {
            return Some(tap(x0, y0));
        }
        let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
        let bottom = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Bilinear sample with border clamping; defined everywhere.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Separable Gaussian blur with reflect padding. `sigma <= 0` is a copy.
    pub fn gaussian_blur(&self, sigma: f64) -> Raster {
        if sigma <= 0.0 || self.is_empty() {
            return self.clone();
        }
        let kernel = gaussian_kernel(sigma);
        let horizontal = convolve_rows(self, &kernel);
        convolve_cols(&horizontal, &kernel)
    }

    /// Area-agnostic bilinear resize (align-corners = false convention).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let rows = par::map_range(height, |y| {
            let fy = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
            (0..width)
                .map(|x| {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                    self.sample_clamped(fx, fy)
                })
                .collect::<Vec<_>>()
        });
        Raster {
            width,
            height,
            data: rows.concat(),
        }
    }

    /// Rectangular sub-window; panics if it does not fit.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Raster {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn flip_vertical(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y)
        })
    }

    /// Rotates by `quarter_turns` × 90° counter-clockwise.
    pub fn rot90(&self, quarter_turns: u8) -> Raster {
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Raster::from_fn(self.height, self.width, |x, y| {
                self.get(self.width - 1 - y, x)
            }),
            2 => Raster::from_fn(self.width, self.height, |x, y| {
                self.get(self.width - 1 - x, self.height - 1 - y)
            }),
            _ => Raster::from_fn(self.height, self.width, |x, y| {
                self.get(y, self.height - 1 - x)
            }),
        }
    }

    /// 8-bit quantization used for PNG storage.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Raster> {
        Raster::from_vec(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Loads any image format `image` understands, converted to 8-bit luma.
    pub fn load_gray(path: impl AsRef<Path>) -> Result<Raster> {
        let img = image::open(path.as_ref())?.into_luma8();
        let (w, h) = img.dimensions();
        Raster::from_u8(w as usize, h as usize, img.as_raw())
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .ok_or_else(|| Error::InvalidArgument("raster buffer size".into()))?;
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Reflect-101 index (`-1 -> 1`, `n -> n-2`), valid for any offset.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn convolve_rows(src: &Raster, kernel: &[f64]) -> Raster {
    let r = (kernel.len() / 2) as isize;
    let w = src.width;
    let mut out = vec![0.0; src.data.len()];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        let s = &src.data[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * s[reflect_index(x as isize + k as isize - r, w)];
            }
            *o = acc;
        }
    });
    Raster {
        width: src.width,
        height: src.height,
        data: out,
    }
}

fn convolve_cols(src: &Raster, kernel: &[f64]) -> Raster {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = src.dims();
    let mut out = vec![0.0; src.data.len()];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        for (k, kv) in kernel.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r, h);
            let s = &src.data[sy * w..(sy + 1) * w];
            for (o, v) in row.iter_mut().zip(s) {
                *o += kv * v;
            }
        }
    });
    Raster {
        width: w,
        height: h,
        data: out,
    }
}

/// Per-pixel gradients by central differences (replicated border).
pub fn gradients(img: &Raster) -> (Raster, Raster) {
    let (w, h) = img.dims();
    let gx = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y))
    });
    let gy = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1))
    });
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(3, 5), 3);
    }

    #[test]
    fn blur_preserves_constants() {
        let r = Raster::filled(9, 7, 0.37);
        let b = r.gaussian_blur(1.5);
        for v in b.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn rotations_compose_to_identity() {
        let r = Raster::from_fn(5, 3, |x, y| (x * 10 + y) as f64);
        assert_eq!(r.rot90(1).rot90(3), r);
        assert_eq!(r.rot90(2).rot90(2), r);
        assert_eq!(r.rot90(1).dims(), (3, 5));
        assert_eq!(r.flip_horizontal().flip_horizontal(), r);
    }

    #[test]
    fn bilinear_hits_pixel_centers() {
        let r = Raster::from_fn(4, 4, |x, y| (x + 4 * y) as f64);
        assert_eq!(r.sample_bilinear(2.0, 1.0), Some(6.0));
        assert_eq!(r.sample_bilinear(2.5, 1.0), Some(6.5));
        assert_eq!(r.sample_bilinear(-1.5, 0.0), None);
    }

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let r = Raster::from_fn(6, 4, |x, y| ((x * 37 + y * 11) % 256) as f64 / 255.0);
        r.save_png(&p).unwrap();
        let back = Raster::load_gray(&p).unwrap();
        assert_eq!(back, r);
    }
}
