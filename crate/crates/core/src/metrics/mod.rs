//! No-reference image quality: histogram entropy, intensity spread and NIQE.

mod niqe;

pub use niqe::{niqe, niqe_features, NiqeModel, NIQE_FEATURES, NIQE_MAGIC};

use crate::raster::Raster;

/// 256-bin histogram of `round(255·v)` (values clamped to `[0, 1]`).
pub fn histogram256(img: &Raster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    hist
}

/// Shannon entropy in bits of the 256-bin intensity histogram.
pub fn entropy(img: &Raster) -> f64 {
    entropy_of_values(img.data())
}

/// [`entropy`] over an arbitrary set of `[0, 1]` values.
pub fn entropy_of_values(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut hist = [0u64; 256];
    for &v in values {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let n = values.len() as f64;
    -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Population standard deviation on the 0–255 scale.
pub fn std_dev(img: &Raster) -> f64 {
    std_dev_of_values(img.data())
}

/// [`std_dev`] over an arbitrary set of `[0, 1]` values.
pub fn std_dev_of_values(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    // shifted by the first value so constant inputs give exactly zero
    let shift = values[0];
    let (s1, s2) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = v - shift;
        (a + d, b + d * d)
    });
    let var = (s2 - s1 * s1 / n) / n;
    255.0 * var.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(entropy(&Raster::filled(8, 8, 0.3)), 0.0);
        let two = Raster::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 });
        assert!((entropy(&two) - 1.0).abs() < 1e-12);
        let all = Raster::from_fn(16, 16, |x, y| (y * 16 + x) as f64 / 255.0);
        assert!((entropy(&all) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn std_dev_closed_forms() {
        assert_eq!(std_dev(&Raster::filled(4, 4, 0.7)), 0.0);
        let two = Raster::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 });
        assert!((std_dev(&two) - 127.5).abs() < 1e-9);
    }
}
