use std::path::Path;

use serde::{Deserialize, Serialize};

use super::homography::{Homography, RowMajor};
use crate::error::{Error, Result};

/// Thermal sensor resolution of the reference rig.
pub const DEFAULT_IR_RESOLUTION: (usize, usize) = (640, 512);
/// Event sensor resolution of the reference rig.
pub const DEFAULT_EV_RESOLUTION: (usize, usize) = (346, 260);

/// Fixed geometric relation between the thermal and the event camera.
///
/// `h_ir_to_ev` maps thermal pixel coordinates to event pixel coordinates;
/// intrinsics are folded into it.
#[derive(Clone, Debug, PartialEq)]
pub struct RigCalibration {
    pub h_ir_to_ev: Homography,
    /// `(width, height)` in pixels.
    pub ir_resolution: (usize, usize),
    /// `(width, height)` in pixels.
    pub ev_resolution: (usize, usize),
}

impl Default for RigCalibration {
    fn default() -> Self {
        Self {
            h_ir_to_ev: Homography::identity(),
            ir_resolution: DEFAULT_IR_RESOLUTION,
            ev_resolution: DEFAULT_EV_RESOLUTION,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    h_ir_to_ev: RowMajor,
    ir_resolution: [usize; 2],
    ev_resolution: [usize; 2],
}

impl RigCalibration {
    pub fn new(
        h_ir_to_ev: Homography,
        ir_resolution: (usize, usize),
        ev_resolution: (usize, usize),
    ) -> Result<Self> {
        for (name, (w, h)) in [("ir", ir_resolution), ("ev", ev_resolution)] {
            if w == 0 || h == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} resolution must be positive, got {w}x{h}"
                )));
            }
        }
        Ok(Self {
            h_ir_to_ev,
            ir_resolution,
            ev_resolution,
        })
    }

    /// Co-located cameras sharing one resolution.
    pub fn identity(resolution: (usize, usize)) -> Self {
        Self {
            h_ir_to_ev: Homography::identity(),
            ir_resolution: resolution,
            ev_resolution: resolution,
        }
    }

    pub fn h_ev_to_ir(&self) -> Result<Homography> {
        self.h_ir_to_ev.inverse()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = RigFile {
            h_ir_to_ev: self.h_ir_to_ev.into(),
            ir_resolution: [self.ir_resolution.0, self.ir_resolution.1],
            ev_resolution: [self.ev_resolution.0, self.ev_resolution.1],
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RigFile = serde_json::from_str(text)?;
        Self::new(
            file.h_ir_to_ev.try_into()?,
            (file.ir_resolution[0], file.ir_resolution[1]),
            (file.ev_resolution[0], file.ev_resolution[1]),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Transfers a thermal-camera motion to the rigidly attached event camera:
/// `A · H · A⁻¹` with `A = h_ir_to_ev`.
pub fn compose_relative_motion(h_ir_rel: &Homography, rig: &RigCalibration) -> Result<Homography> {
    let a = rig.h_ir_to_ev;
    let a_inv = a.inverse()?;
    // validates h_ir_rel
    h_ir_rel.inverse()?;
    Homography::new(a.matrix() * h_ir_rel.matrix() * a_inv.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let rig = RigCalibration::new(
            Homography::from_row_major([0.54, 0.0, 3.0, 0.0, 0.54, -1.0, 0.0, 0.0, 1.0]).unwrap(),
            (640, 512),
            (346, 260),
        )
        .unwrap();
        let back = RigCalibration::from_json(&rig.to_json().unwrap()).unwrap();
        assert_eq!(back, rig);
    }

    #[test]
    fn json_keys_match_file_contract() {
        let v: serde_json::Value =
            serde_json::from_str(&RigCalibration::default().to_json().unwrap()).unwrap();
        assert_eq!(v["h_ir_to_ev"].as_array().unwrap().len(), 9);
        assert_eq!(v["ir_resolution"], serde_json::json!([640, 512]));
        assert_eq!(v["ev_resolution"], serde_json::json!([346, 260]));
    }

    #[test]
    fn rejects_zero_resolution() {
        assert!(RigCalibration::new(Homography::identity(), (0, 10), (10, 10)).is_err());
    }

    #[test]
    fn identity_motion_stays_identity() {
        let rig = RigCalibration::new(
            Homography::from_row_major([0.7, 0.1, 5.0, -0.05, 0.6, 2.0, 1e-4, 0.0, 1.0]).unwrap(),
            (64, 64),
            (40, 40),
        )
        .unwrap();
        let out = compose_relative_motion(&Homography::identity(), &rig).unwrap();
        assert!(out.max_abs_diff(&Homography::identity()) < 1e-12);
    }

    #[test]
    fn identity_rig_passes_motion_through() {
        let h = Homography::from_row_major([1.01, 0.02, 3.0, 0.0, 0.99, -4.0, 1e-5, 0.0, 1.0]).unwrap();
        let out = compose_relative_motion(&h, &RigCalibration::identity((32, 32))).unwrap();
        assert!(out.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn half_scale_rig_halves_translation() {
        let rig = RigCalibration::new(Homography::scaling(0.5).unwrap(), (64, 64), (32, 32)).unwrap();
        let out = compose_relative_motion(&Homography::translation(10.0, 0.0), &rig).unwrap();
        // explicit product: diag(.5,.5,1) * T(10,0) * diag(2,2,1)
        let expected = [1.0, 0.0, 5.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in out.to_row_major().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
