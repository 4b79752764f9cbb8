//! Synthetic data: pseudo-thermal conversion of color video and
//! contrast-threshold event synthesis.

pub mod scene;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calib::{warp_raster, RigCalibration};
use crate::error::{Error, Result};
use crate::events::{render_frame, EventRecord, EventStream, FrameClock, Polarity, DEFAULT_GAIN};
use crate::group::FrameGroup;
use crate::par;
use crate::raster::{Raster, ThermalFrame};

/// Floor added before taking logarithms.
pub const LOG_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Log-intensity step per event.
    pub contrast_threshold: f64,
    /// Event aggregation window per frame.
    pub window_us: u64,
    pub group_len: usize,
    pub period_us: u64,
    /// Number of pseudo-thermal intensity levels.
    pub thermal_levels: usize,
    pub thermal_blur_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.2,
            window_us: 30_000,
            group_len: 7,
            period_us: 20_000,
            thermal_levels: 16,
            thermal_blur_sigma: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::InvalidArgument("contrast_threshold must be positive".into()));
        }
        if self.window_us == 0 || self.period_us == 0 {
            return Err(Error::InvalidArgument("window and period must be positive".into()));
        }
        if self.group_len < 2 {
            return Err(Error::InvalidArgument("group_len must be at least 2".into()));
        }
        if self.thermal_levels < 2 {
            return Err(Error::InvalidArgument("thermal_levels must be at least 2".into()));
        }
        Ok(())
    }

    /// Frame clock of generated sequences. It starts one window in so every
    /// frame, including the first, has a non-empty aggregation span.
    pub fn clock(&self) -> FrameClock {
        FrameClock {
            period_us: self.period_us,
            t0: self.window_us,
        }
    }
}

/// Linear RGB frame, channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbFrame {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn gray(r: &Raster) -> Self {
        Self::from_fn(r.width(), r.height(), |x, y| [r.get(x, y); 3])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            let [r, g, b] = self.get(x, y);
            0.299 * r + 0.587 * g + 0.114 * b
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self::from_fn(w as usize, h as usize, |x, y| {
            let p = img.get_pixel(x as u32, y as u32).0;
            [p[0], p[1], p[2]].map(|c| f64::from(c) / 255.0)
        }))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let c = self.get(x as usize, y as usize);
            p.0 = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Quantizes a `[0, 1]` intensity into `levels` bands and maps the band index
/// back onto `[0, 1]`.
pub fn quantize_level(v: f64, levels: usize) -> f64 {
    let top = levels - 1;
    let band = ((v.clamp(0.0, 1.0) * levels as f64).floor() as usize).min(top);
    band as f64 / top as f64
}

/// Approximate thermal rendering: luminance banded into a few intensity
/// levels, then blurred. Surfaces whose luminance falls in the same band
/// become indistinguishable.
pub fn rgb_to_pseudo_thermal(rgb: &RgbFrame, cfg: &SimConfig) -> ThermalFrame {
    let levels = cfg.thermal_levels.max(2);
    rgb.luminance()
        .map(|v| quantize_level(v, levels))
        .gaussian_blur(cfg.thermal_blur_sigma)
        .clip01()
}

/// Contrast-threshold event synthesis on per-pixel log intensities.
///
/// Every pixel keeps a reference log level; whenever the current level moves
/// a whole number of thresholds away from it, one event per threshold is
/// emitted and the reference advances by that many thresholds. Event times
/// are interpolated linearly between the bracketing frame times.
pub fn synthesize_events(frames: &[Raster], timestamps: &[u64], cfg: &SimConfig) -> Result<EventStream> {
    if frames.len() != timestamps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but {} timestamps",
            frames.len(),
            timestamps.len()
        )));
    }
    if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotonicTimestamps { index: i + 1 });
    }
    if !(cfg.contrast_threshold > 0.0) {
        return Err(Error::InvalidArgument("contrast_threshold must be positive".into()));
    }
    let Some(first) = frames.first() else {
        return Ok(EventStream::default());
    };
    for f in frames {
        first.ensure_same_dims(f)?;
    }
    let (w, h) = first.dims();
    if w > usize::from(u16::MAX) + 1 || h > usize::from(u16::MAX) + 1 {
        return Err(Error::InvalidArgument("frame too large for 16-bit event coordinates".into()));
    }
    let c = cfg.contrast_threshold;
    let logs: Vec<Raster> = frames.iter().map(|f| f.map(|v| (v + LOG_EPS).ln())).collect();
    let rows = par::map_range(h, |y| {
        let mut out = Vec::new();
        for x in 0..w {
            let mut reference = logs[0].get(x, y);
            for k in 1..logs.len() {
                let prev = logs[k - 1].get(x, y);
                let cur = logs[k].get(x, y);
                let diff = cur - reference;
                let n = (diff.abs() / c + 1e-9).floor() as u64;
                if n == 0 {
                    continue;
                }
                let sign = diff.signum();
                let polarity = if sign > 0.0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                let (t0, t1) = (timestamps[k - 1], timestamps[k]);
                let span = (t1 - t0) as f64;
                for j in 1..=n {
                    let level = reference + sign * j as f64 * c;
                    let frac = if cur != prev {
                        ((level - prev) / (cur - prev)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let t = (t0 + (frac * span).round() as u64).clamp(t0, t1 - 1);
                    out.push(EventRecord::new(t, x as u16, y as u16, polarity));
                }
                reference += sign * n as f64 * c;
            }
        }
        out
    });
    Ok(EventStream::from_unsorted(rows.concat()))
}

/// Builds a [`FrameGroup`] from the last `cfg.group_len` frames of a color
/// sequence: pseudo-thermal frames in thermal-camera coordinates and event
/// frames in event-camera coordinates (the scene is viewed by the thermal
/// camera; the event camera sees it through `rig.h_ir_to_ev`). Events are
/// synthesized over the whole sequence so the first frame of the group has
/// its history.
pub fn make_group(frames: &[RgbFrame], cfg: &SimConfig, rig: &RigCalibration) -> Result<FrameGroup> {
    cfg.validate()?;
    if frames.len() < cfg.group_len {
        return Err(Error::InsufficientFrames {
            found: frames.len(),
            required: cfg.group_len,
        });
    }
    let (thermal, events) = simulate_sequence(frames, cfg, rig)?;
    let skip = frames.len() - cfg.group_len;
    FrameGroup::new(thermal[skip..].to_vec(), events[skip..].to_vec())
}

/// Pseudo-thermal frames plus one rendered event frame per frame, along with
/// the raw stream, for an entire sequence.
pub fn simulate_sequence(
    frames: &[RgbFrame],
    cfg: &SimConfig,
    rig: &RigCalibration,
) -> Result<(Vec<ThermalFrame>, Vec<crate::events::EventFrame>)> {
    let (thermal, stream) = simulate_stream(frames, cfg, rig)?;
    let clock = cfg.clock();
    let events = (0..frames.len())
        .map(|k| {
            let (s, e) = clock.window_ending_at(k, cfg.window_us);
            render_frame(stream.window(s, e), rig.ev_resolution, s, e, DEFAULT_GAIN)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((thermal, events))
}

/// Pseudo-thermal frames and the synthesized event stream of a sequence.
pub fn simulate_stream(
    frames: &[RgbFrame],
    cfg: &SimConfig,
    rig: &RigCalibration,
) -> Result<(Vec<ThermalFrame>, EventStream)> {
    cfg.validate()?;
    let Some(first) = frames.first() else {
        return Err(Error::InsufficientFrames { found: 0, required: 1 });
    };
    if first.dims() != rig.ir_resolution {
        return Err(Error::ShapeMismatch {
            expected: rig.ir_resolution,
            actual: first.dims(),
        });
    }
    for f in frames {
        if f.dims() != first.dims() {
            return Err(Error::ShapeMismatch {
                expected: first.dims(),
                actual: f.dims(),
            });
        }
    }
    let thermal: Vec<_> = par::map_slice(frames, |f| rgb_to_pseudo_thermal(f, cfg));
    let ev_view: Vec<_> = par::map_slice(frames, |f| {
        warp_raster(&f.luminance(), &rig.h_ir_to_ev, rig.ev_resolution)
    });
    let clock = cfg.clock();
    let stamps: Vec<u64> = (0..frames.len()).map(|k| clock.frame_time(k)).collect();
    let stream = synthesize_events(&ev_view, &stamps, cfg)?;
    Ok((thermal, stream))
}
