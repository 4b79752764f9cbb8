//! Random crop plus flips and quarter turns, applied identically to every
//! raster of a training sample. All transforms are pixel permutations of the
//! cropped window.

use rand::Rng;
use uta_core::Raster;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    /// `(x0, y0, width, height)` of the crop, applied first.
    pub crop: (usize, usize, usize, usize),
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Counter-clockwise quarter turns, applied last.
    pub quarter_turns: u8,
}

impl Transform {
    pub fn identity(dims: (usize, usize)) -> Self {
        Self {
            crop: (0, 0, dims.0, dims.1),
            flip_horizontal: false,
            flip_vertical: false,
            quarter_turns: 0,
        }
    }

    pub fn output_dims(&self) -> (usize, usize) {
        let (_, _, w, h) = self.crop;
        if self.quarter_turns % 2 == 1 {
            (h, w)
        } else {
            (w, h)
        }
    }

    pub fn apply(&self, r: &Raster) -> Raster {
        let (x0, y0, w, h) = self.crop;
        let mut out = r.crop(x0, y0, w, h);
        if self.flip_horizontal {
            out = out.flip_horizontal();
        }
        if self.flip_vertical {
            out = out.flip_vertical();
        }
        out.rot90(self.quarter_turns)
    }
}

/// Crop size for frames of `dims`: the requested `[w, h]`, or half of each
/// dimension, rounded down to a multiple of `multiple`.
pub fn crop_size(dims: (usize, usize), requested: Option<[usize; 2]>, multiple: usize) -> Result<(usize, usize)> {
    let (w, h) = match requested {
        Some([w, h]) => (w, h),
        None => (dims.0 / 2 / multiple * multiple, dims.1 / 2 / multiple * multiple),
    };
    if w == 0 || h == 0 || w > dims.0 || h > dims.1 {
        return Err(Error::Config(format!("crop {w}x{h} does not fit frames of {}x{}", dims.0, dims.1)));
    }
    if w % multiple != 0 || h % multiple != 0 {
        return Err(Error::Config(format!("crop {w}x{h} must be a multiple of {multiple}")));
    }
    Ok((w, h))
}

/// Draws a crop position and, when `augment` is set, flips and a rotation.
/// Rotations by an odd number of quarter turns only occur for square crops,
/// so every sample of a batch keeps the same shape.
pub fn sample_transform(rng: &mut impl Rng, dims: (usize, usize), crop: (usize, usize), augment: bool) -> Transform {
    let x0 = rng.gen_range(0..=dims.0 - crop.0);
    let y0 = rng.gen_range(0..=dims.1 - crop.1);
    let (mut fh, mut fv, mut turns) = (false, false, 0);
    if augment {
        fh = rng.gen_bool(0.5);
        fv = rng.gen_bool(0.5);
        turns = if crop.0 == crop.1 { rng.gen_range(0..4) } else { 2 * rng.gen_range(0..2) };
    }
    Transform {
        crop: (x0, y0, crop.0, crop.1),
        flip_horizontal: fh,
        flip_vertical: fv,
        quarter_turns: turns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_is_exact() {
        let r = Raster::from_fn(6, 4, |x, y| (x + 10 * y) as f64);
        assert_eq!(Transform::identity((6, 4)).apply(&r), r);
    }

    #[test]
    fn crop_size_rules() {
        assert_eq!(crop_size((128, 96), None, 16).unwrap(), (64, 48));
        assert_eq!(crop_size((128, 128), Some([64, 64]), 16).unwrap(), (64, 64));
        assert!(crop_size((128, 128), Some([60, 64]), 16).is_err());
        assert!(crop_size((32, 32), Some([64, 64]), 16).is_err());
    }

    #[test]
    fn rectangular_crops_keep_orientation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = sample_transform(&mut rng, (100, 80), (64, 32), true);
            assert_eq!(t.output_dims(), (64, 32));
        }
    }

    #[test]
    fn output_dims_match_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = Raster::from_fn(40, 40, |x, y| (x * 41 + y) as f64);
        for _ in 0..50 {
            let t = sample_transform(&mut rng, (40, 40), (16, 16), true);
            assert_eq!(t.apply(&r).dims(), t.output_dims());
        }
    }
}
