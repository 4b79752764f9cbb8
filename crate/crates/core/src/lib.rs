//! Signal processing for thermal/event signage sketching: rig geometry,
//! event streams, synthetic data, pseudo ground truth and quality metrics.

pub mod calib;
pub mod error;
pub mod events;
pub mod group;
pub mod metrics;
pub mod par;
pub mod pseudo_gt;
pub mod raster;
pub mod simgen;

pub use error::{Error, Result};
pub use group::FrameGroup;
pub use raster::{Raster, ThermalFrame};
