//! Rig geometry: homographies, thermal ego-motion, cross-modal registration
//! and the transfer of motion between the two cameras.

mod features;
mod homography;
mod motion;
mod rig;

pub use features::{
    detect_corners, extract_features, harris_response, match_features, Corner, Feature,
    FeatureParams, MatchParams,
};
pub use homography::{spread_ratio, Homography, RowMajor, DET_EPS};
pub use motion::{
    estimate_thermal_motion, ransac_homography, refine_photometric, register_modalities,
    MotionParams, RobustFit,
};
pub use rig::{compose_relative_motion, RigCalibration, DEFAULT_EV_RESOLUTION, DEFAULT_IR_RESOLUTION};

use crate::par;
use crate::raster::Raster;

/// Inverse-mapping warp: output pixel `p` takes `src(h⁻¹·p)` by bilinear
/// interpolation, zero where that falls outside `src`. `h` maps source pixel
/// coordinates to output coordinates.
///
/// Identity maps return an exact copy and integer translations are pure index
/// shifts, so neither introduces resampling error.
pub fn warp_raster(src: &Raster, h: &Homography, out_dims: (usize, usize)) -> Raster {
    let (w, hgt) = out_dims;
    if h.is_identity() && src.dims() == out_dims {
        return src.clone();
    }
    if let Some((tx, ty)) = h.as_integer_translation() {
        return Raster::from_fn(w, hgt, |x, y| {
            let sx = x as i64 - tx;
            let sy = y as i64 - ty;
            if sx < 0 || sy < 0 || sx >= src.width() as i64 || sy >= src.height() as i64 {
                0.0
            } else {
                src.get(sx as usize, sy as usize)
            }
        });
    }
    let inv = match h.inverse() {
        Ok(inv) => inv,
        // callers validate; a singular map has no preimage anywhere
        Err(_) => return Raster::zeros(w, hgt),
    };
    let rows = par::map_range(hgt, |y| {
        (0..w)
            .map(|x| {
                inv.apply(x as f64, y as f64)
                    .and_then(|(sx, sy)| src.sample_bilinear(sx, sy))
                    .unwrap_or(0.0)
            })
            .collect::<Vec<_>>()
    });
    Raster::from_vec(w, hgt, rows.concat()).expect("row lengths match width")
}
