//! Procedural scenes: textured test frames, signage sequences with a glyph
//! that thermal banding hides, and a pristine corpus for quality models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RgbFrame;
use crate::raster::Raster;

/// Cluttered frame of random rectangles and discs over a smooth gradient;
/// rich in corners and locally distinctive.
pub fn textured_frame(width: usize, height: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let gx: f64 = rng.gen_range(-0.2..0.2);
    let gy: f64 = rng.gen_range(-0.2..0.2);
    let n_shapes = ((width * height) / 120).clamp(24, 600);
    let shapes: Vec<(bool, f64, f64, f64, f64, f64)> = (0..n_shapes)
        .map(|_| {
            let disc = rng.gen_bool(0.3);
            let cx = rng.gen_range(0.0..w);
            let cy = rng.gen_range(0.0..h);
            let rx = rng.gen_range(2.5..(w / 8.0).max(3.0));
            let ry = rng.gen_range(2.5..(h / 8.0).max(3.0));
            let v = rng.gen_range(0.05..0.95);
            (disc, cx, cy, rx, ry, v)
        })
        .collect();
    let img = Raster::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 0.5 + gx * (xf / w - 0.5) + gy * (yf / h - 0.5);
        for &(disc, cx, cy, rx, ry, val) in &shapes {
            let inside = if disc {
                ((xf - cx) / rx).powi(2) + ((yf - cy) / ry).powi(2) <= 1.0
            } else {
                (xf - cx).abs() <= rx && (yf - cy).abs() <= ry
            };
            if inside {
                v = val;
            }
        }
        v
    });
    img.gaussian_blur(0.8)
}

/// 5×7 bitmaps for the glyphs a sign plate can carry.
fn glyph_bitmap(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        _ => [0x1f, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1f],
    }
}

/// Parameters of a synthetic road-sign sequence. The plate and glyph
/// luminances share one thermal band while differing in log intensity by
/// more than an event threshold.
#[derive(Clone, Debug)]
pub struct SignScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Camera pan in pixels per frame (integer so edges stay crisp).
    pub velocity: (i64, i64),
    pub background: f64,
    pub plate: f64,
    pub glyph: f64,
    pub text: String,
    /// Glyph pixel scale.
    pub glyph_scale: usize,
    pub seed: u64,
}

impl Default for SignScene {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            frames: 14,
            velocity: (2, 0),
            background: 0.02,
            plate: 0.07,
            glyph: 0.12,
            text: "60".into(),
            glyph_scale: 3,
            seed: 1,
        }
    }
}

impl SignScene {
    /// Renders the sequence as the thermal camera's view of the world.
    pub fn render(&self) -> Vec<RgbFrame> {
        let world = self.world();
        let (vx, vy) = self.velocity;
        (0..self.frames as i64)
            .map(|k| {
                let (ox, oy) = (k * vx, k * vy);
                RgbFrame::from_fn(self.width, self.height, |x, y| {
                    let v = world(x as i64 + ox, y as i64 + oy);
                    [v, v, v]
                })
            })
            .collect()
    }

    /// Axis-aligned box `(x0, y0, x1, y1)` of the plate in frame `k`
    /// (exclusive upper corner).
    pub fn plate_box(&self, k: usize) -> (i64, i64, i64, i64) {
        let (px, py, pw, ph) = self.plate_rect();
        let (ox, oy) = (k as i64 * self.velocity.0, k as i64 * self.velocity.1);
        (px - ox, py - oy, px + pw - ox, py + ph - oy)
    }

    fn plate_rect(&self) -> (i64, i64, i64, i64) {
        let s = self.glyph_scale as i64;
        let n = self.text.chars().count().max(1) as i64;
        let pw = n * 6 * s + 3 * s;
        let ph = 7 * s + 6 * s;
        let drift = self.frames as i64 / 2;
        let px = self.width as i64 / 2 - pw / 2 + drift * self.velocity.0;
        let py = self.height as i64 / 2 - ph / 2 + drift * self.velocity.1;
        (px, py, pw, ph)
    }

    fn world(&self) -> impl Fn(i64, i64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (px, py, pw, ph) = self.plate_rect();
        let span_x = self.width as i64 + self.frames as i64 * self.velocity.0.abs() + 64;
        let span_y = self.height as i64 + self.frames as i64 * self.velocity.1.abs() + 64;
        // warm objects: bright, distinct bands, away from the plate
        let mut objects: Vec<(i64, i64, i64, i64, f64)> = Vec::new();
        let mut tries = 0;
        while objects.len() < 40 && tries < 4000 {
            tries += 1;
            let w = rng.gen_range(6..20);
            let h = rng.gen_range(6..20);
            let x = rng.gen_range(-32..span_x - w);
            let y = rng.gen_range(-32..span_y - h);
            let clear = x + w + 4 < px || x > px + pw + 4 || y + h + 4 < py || y > py + ph + 4;
            if !clear {
                continue;
            }
            let band = rng.gen_range(4..16) as f64;
            objects.push((x, y, w, h, (band + 0.5) / 16.0));
        }
        let s = self.glyph_scale as i64;
        let glyphs: Vec<[u8; 7]> = self.text.chars().map(glyph_bitmap).collect();
        let (bg, plate, glyph) = (self.background, self.plate, self.glyph);
        move |x: i64, y: i64| {
            for &(ox, oy, w, h, v) in objects.iter().rev() {
                if x >= ox && x < ox + w && y >= oy && y < oy + h {
                    return v;
                }
            }
            if x >= px && x < px + pw && y >= py && y < py + ph {
                let gx = x - px - 2 * s;
                let gy = y - py - 3 * s;
                if gx >= 0 && gy >= 0 && gy < 7 * s {
                    let cell = (gx / s) as usize;
                    let (ci, col) = (cell / 6, cell % 6);
                    let row = (gy / s) as usize;
                    if ci < glyphs.len() && col < 5 && glyphs[ci][row] & (0x10 >> col) != 0 {
                        return glyph;
                    }
                }
                return plate;
            }
            bg
        }
    }
}

/// Natural-looking grayscale images with approximately 1/f spectra plus
/// occluding shapes; the reference corpus for quality models.
pub fn pristine_corpus(count: usize, size: usize, seed: u64) -> Vec<Raster> {
    (0..count)
        .map(|i| pristine_image(size, seed.wrapping_add(i as u64 * 7919)))
        .collect()
}

fn pristine_image(size: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // octave sum of smoothed white noise approximates a 1/f spectrum
    let mut acc = Raster::zeros(size, size);
    let mut amp = 1.0;
    let mut sigma = size as f64 / 8.0;
    while sigma >= 0.5 {
        let samples = (0..size * size).map(|_| normal.sample(&mut rng)).collect();
        let noise = Raster::from_vec(size, size, samples).expect("square buffer");
        let layer = noise.gaussian_blur(sigma);
        let (lo, hi) = layer.min_max();
        let scale = if hi > lo { amp / (hi - lo) } else { 0.0 };
        for (a, l) in acc.data_mut().iter_mut().zip(layer.data()) {
            *a += scale * l;
        }
        amp *= 0.6;
        sigma /= 2.0;
    }
    let (lo, hi) = acc.min_max();
    let mut img = acc.map(|v| 0.15 + 0.7 * (v - lo) / (hi - lo).max(1e-12));
    let shapes = rng.gen_range(3..9);
    for _ in 0..shapes {
        let cx = rng.gen_range(0.0..size as f64);
        let cy = rng.gen_range(0.0..size as f64);
        let r = rng.gen_range(size as f64 / 16.0..size as f64 / 5.0);
        let shade: f64 = rng.gen_range(0.05..0.95);
        let grad: f64 = rng.gen_range(-0.004..0.004);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    img.set(x, y, (shade + grad * dx).clamp(0.0, 1.0));
                }
            }
        }
    }
    img.gaussian_blur(0.6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{extract_features, FeatureParams};
    use crate::simgen::{rgb_to_pseudo_thermal, SimConfig};

    #[test]
    fn textured_frames_have_many_corners() {
        let f = textured_frame(96, 80, 3);
        assert!(extract_features(&f, &FeatureParams::default()).len() >= 30);
    }

    #[test]
    fn glyph_hidden_in_thermal_band() {
        let scene = SignScene::default();
        let frames = scene.render();
        assert_eq!(frames.len(), scene.frames);
        let t = rgb_to_pseudo_thermal(&frames[0], &SimConfig::default());
        let (x0, y0, x1, y1) = scene.plate_box(0);
        let s = scene.glyph_scale as i64;
        let mut inner = Vec::new();
        for y in y0 + s..y1 - s {
            for x in x0 + s..x1 - s {
                inner.push(t.get(x as usize, y as usize));
            }
        }
        let (lo, hi) = inner.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo < 1e-12, "plate interior varies: {lo}..{hi}");
        let lum = frames[0].luminance();
        let distinct: std::collections::BTreeSet<u64> = (y0..y1)
            .flat_map(|y| (x0..x1).map(move |x| (x, y)))
            .map(|(x, y)| lum.get(x as usize, y as usize).to_bits())
            .collect();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn pristine_corpus_is_deterministic() {
        assert_eq!(pristine_corpus(2, 64, 5), pristine_corpus(2, 64, 5));
        let c = pristine_corpus(1, 64, 5);
        let (lo, hi) = c[0].min_max();
        assert!(lo >= 0.0 && hi <= 1.0 && hi - lo > 0.3);
    }
}
