//! Event streams: records, partitioning by the thermal clock, rasterization,
//! warping and spatiotemporal denoising.

mod denoise;
mod io;

pub use denoise::{denoise_spatiotemporal, SupportRadius};
pub use io::{read_events_bin, read_events_csv, write_events_bin, write_events_csv, BIN_RECORD_LEN};

use crate::calib::{warp_raster, Homography};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Counts saturate at three events per pixel and window.
pub const DEFAULT_GAIN: f64 = 1.0 / 3.0;
/// 50 frames per second.
pub const DEFAULT_PERIOD_US: u64 = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::Parse(format!("polarity must be -1 or 1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventRecord {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl EventRecord {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }
}

/// Time-ordered event records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    records: Vec<EventRecord>,
}

impl EventStream {
    /// Fails with the index of the first record that goes back in time.
    pub fn new(records: Vec<EventRecord>) -> Result<Self> {
        if let Some(i) = records.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::UnsortedStream { index: i + 1 });
        }
        Ok(Self { records })
    }

    /// Sorts by time (stable, so simultaneous records keep their order).
    pub fn from_unsorted(mut records: Vec<EventRecord>) -> Self {
        records.sort_by_key(|r| r.t);
        Self { records }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with `start <= t < end`.
    pub fn window(&self, start: u64, end: u64) -> &[EventRecord] {
        let lo = self.records.partition_point(|r| r.t < start);
        let hi = self.records.partition_point(|r| r.t < end);
        &self.records[lo..hi.max(lo)]
    }
}

/// Thermal-camera frame clock; frame `k` is stamped `t0 + k·period_us`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameClock {
    pub period_us: u64,
    pub t0: u64,
}

impl Default for FrameClock {
    fn default() -> Self {
        Self {
            period_us: DEFAULT_PERIOD_US,
            t0: 0,
        }
    }
}

impl FrameClock {
    pub fn new(period_us: u64, t0: u64) -> Result<Self> {
        if period_us == 0 {
            return Err(Error::InvalidArgument("frame period must be positive".into()));
        }
        Ok(Self { period_us, t0 })
    }

    pub fn frame_time(&self, k: usize) -> u64 {
        self.t0 + k as u64 * self.period_us
    }

    /// Aggregation window `[t_k − window_us, t_k)` ending at frame `k`.
    pub fn window_ending_at(&self, k: usize, window_us: u64) -> (u64, u64) {
        let end = self.frame_time(k);
        (end.saturating_sub(window_us), end)
    }
}

/// Splits `records` into `n_frames` half-open clock periods
/// `[t0 + k·period, t0 + (k+1)·period)`. Records outside the covered span
/// are dropped.
pub fn partition_stream(records: &[EventRecord], clock: FrameClock, n_frames: usize) -> Result<Vec<EventStream>> {
    if clock.period_us == 0 {
        return Err(Error::InvalidArgument("frame period must be positive".into()));
    }
    if let Some(i) = records.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(Error::UnsortedStream { index: i + 1 });
    }
    let mut out = Vec::with_capacity(n_frames);
    let mut start_idx = records.partition_point(|r| r.t < clock.t0);
    for k in 0..n_frames {
        let end_t = clock.frame_time(k + 1);
        let len = records[start_idx..].partition_point(|r| r.t < end_t);
        out.push(EventStream {
            records: records[start_idx..start_idx + len].to_vec(),
        });
        start_idx += len;
    }
    Ok(out)
}

/// Rasterized event window.
#[derive(Clone, Debug, PartialEq)]
pub struct EventFrame {
    pub pixels: Raster,
    pub t_start: u64,
    pub t_end: u64,
}

impl EventFrame {
    pub fn new(pixels: Raster, t_start: u64, t_end: u64) -> Result<Self> {
        if t_end <= t_start {
            return Err(Error::InvalidArgument(format!(
                "event frame span [{t_start}, {t_end}) is empty"
            )));
        }
        Ok(Self {
            pixels,
            t_start,
            t_end,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }
}

/// Per-pixel event counts times `gain`, clipped to `[0, 1]`. Polarity is
/// ignored.
pub fn render_counts(records: &[EventRecord], resolution: (usize, usize), gain: f64) -> Result<Raster> {
    let (w, h) = resolution;
    let mut counts = vec![0u32; w * h];
    for r in records {
        let (x, y) = (r.x as usize, r.y as usize);
        if x >= w || y >= h {
            return Err(Error::OutOfBounds {
                x: i64::from(r.x),
                y: i64::from(r.y),
                width: w,
                height: h,
            });
        }
        counts[y * w + x] += 1;
    }
    Raster::from_vec(
        w,
        h,
        counts
            .into_iter()
            .map(|c| (f64::from(c) * gain).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Renders the records of `[t_start, t_end)` as an [`EventFrame`].
pub fn render_frame(
    records: &[EventRecord],
    resolution: (usize, usize),
    t_start: u64,
    t_end: u64,
    gain: f64,
) -> Result<EventFrame> {
    EventFrame::new(render_counts(records, resolution, gain)?, t_start, t_end)
}

/// Warps an event frame by `h` (source → destination pixel coordinates),
/// keeping its resolution.
pub fn warp_event_frame(frame: &EventFrame, h: &Homography) -> Result<EventFrame> {
    warp_event_frame_to(frame, h, frame.dims())
}

/// Like [`warp_event_frame`] but onto a raster of `out_dims`.
pub fn warp_event_frame_to(frame: &EventFrame, h: &Homography, out_dims: (usize, usize)) -> Result<EventFrame> {
    h.inverse()?;
    let mut pixels = warp_raster(&frame.pixels, h, out_dims);
    pixels.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(EventFrame {
        pixels,
        t_start: frame.t_start,
        t_end: frame.t_end,
    })
}
