//! Scene discovery and grouping of frames into fixed-length groups.

use std::path::Path;
use std::sync::OnceLock;

use uta_core::calib::RigCalibration;
use uta_core::events::{render_frame, EventFrame, EventStream, DEFAULT_GAIN};
use uta_core::pseudo_gt::event_to_thermal;
use uta_core::Raster;

use crate::error::{Error, Result};
use crate::scene::{SceneDir, SceneTiming, EVENTS_FILE, RIG_FILE, THERMAL_DIR};

/// One scene directory with its geometry and clock.
#[derive(Debug)]
pub struct Scene {
    pub dir: SceneDir,
    pub rig: RigCalibration,
    pub timing: SceneTiming,
    /// One past the largest thermal index.
    pub frame_count: usize,
    stream: OnceLock<EventStream>,
}

impl Scene {
    /// Reads the rig and clock of a scene directory.
    pub fn open(dir: SceneDir) -> Result<Self> {
        let rig = dir.load_rig()?;
        let timing = dir.load_timing()?;
        let frame_count = dir.thermal_indices()?.iter().next_back().map_or(0, |&i| i + 1);
        Ok(Self {
            dir,
            rig,
            timing,
            frame_count,
            stream: OnceLock::new(),
        })
    }

    /// Thermal frame `k` and its events in thermal pixels, 8-bit.
    pub fn frame_pair(&self, k: usize) -> Result<(Raster, Raster)> {
        let t = self.dir.load_thermal(k)?;
        if t.dims() != self.rig.ir_resolution {
            return Err(Error::Dataset(format!(
                "{}: thermal frame {k} is {:?}, rig says {:?}",
                self.dir.name(),
                t.dims(),
                self.rig.ir_resolution
            )));
        }
        let e = self.event_frame(k)?;
        let e_ir = quantize8(&event_to_thermal(&e.pixels, &self.rig)?);
        Ok((t, e_ir))
    }

    /// Event stream, read on first use.
    pub fn events(&self) -> Result<&EventStream> {
        if let Some(s) = self.stream.get() {
            return Ok(s);
        }
        let loaded = self.dir.load_events()?;
        Ok(self.stream.get_or_init(|| loaded))
    }

    /// Event frame `k` in event-camera pixels.
    pub fn event_frame(&self, k: usize) -> Result<EventFrame> {
        let (s, e) = self.timing.clock().window_ending_at(k, self.timing.window_us);
        Ok(render_frame(self.events()?.window(s, e), self.rig.ev_resolution, s, e, DEFAULT_GAIN)?)
    }
}

/// `len` consecutive frames of scene `scene` starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupRef {
    pub scene: usize,
    pub start: usize,
    pub len: usize,
}

/// Why a scene or a group was left out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub scene: String,
    /// `None` when the whole scene is unusable.
    pub start: Option<usize>,
    pub reason: String,
}

/// Frames of one group, oldest first.
#[derive(Clone, Debug)]
pub struct GroupFrames {
    pub thermal: Vec<Raster>,
    /// Event-camera pixels.
    pub events: Vec<EventFrame>,
    /// Events resampled into thermal pixels and quantized to 8 bits like the
    /// thermal frames.
    pub events_ir: Vec<Raster>,
}

#[derive(Debug, Default)]
pub struct SceneDataset {
    pub scenes: Vec<Scene>,
    pub groups: Vec<GroupRef>,
    pub rejected: Vec<Rejection>,
    pub group_len: usize,
}

impl SceneDataset {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Groups of the leading scenes and of the last `val_scenes` scenes.
    pub fn split(&self, val_scenes: usize) -> (Vec<GroupRef>, Vec<GroupRef>) {
        let first_val = self.scenes.len().saturating_sub(val_scenes);
        self.groups.iter().partition(|g| g.scene < first_val)
    }

    pub fn load_group(&self, g: GroupRef) -> Result<GroupFrames> {
        let scene = self
            .scenes
            .get(g.scene)
            .ok_or_else(|| Error::Dataset(format!("no scene {}", g.scene)))?;
        let mut thermal = Vec::with_capacity(g.len);
        let mut events = Vec::with_capacity(g.len);
        let mut events_ir = Vec::with_capacity(g.len);
        for k in g.start..g.start + g.len {
            let t = scene.dir.load_thermal(k)?;
            if t.dims() != scene.rig.ir_resolution {
                return Err(Error::Dataset(format!(
                    "{}: thermal frame {k} is {:?}, rig says {:?}",
                    scene.dir.name(),
                    t.dims(),
                    scene.rig.ir_resolution
                )));
            }
            let e = scene.event_frame(k)?;
            events_ir.push(quantize8(&event_to_thermal(&e.pixels, &scene.rig)?));
            thermal.push(t);
            events.push(e);
        }
        Ok(GroupFrames {
            thermal,
            events,
            events_ir,
        })
    }
}

/// Rounds to the 8-bit grid used for stored frames.
pub fn quantize8(r: &Raster) -> Raster {
    Raster::from_u8(r.width(), r.height(), &r.to_u8()).expect("same dimensions")
}

/// Scans `root` for scene directories (sorted by name) and cuts each into
/// groups of `group_len` frames every `stride` frames. Groups with a missing
/// thermal frame or without an event file are rejected with a diagnostic.
pub fn load_dataset(root: impl AsRef<Path>, group_len: usize, stride: usize) -> Result<SceneDataset> {
    if group_len == 0 || stride == 0 {
        return Err(Error::Config("group length and stride must be positive".into()));
    }
    let mut dirs: Vec<_> = std::fs::read_dir(root.as_ref())?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir() && [THERMAL_DIR, EVENTS_FILE, RIG_FILE].iter().any(|f| p.join(f).exists()));
    dirs.sort();
    let mut ds = SceneDataset {
        group_len,
        ..Default::default()
    };
    for path in dirs {
        let dir = SceneDir::new(path);
        let name = dir.name();
        let reject_scene = |reason: String| Rejection {
            scene: name.clone(),
            start: None,
            reason,
        };
        let rig = match dir.load_rig() {
            Ok(r) => r,
            Err(e) => {
                ds.rejected.push(reject_scene(format!("{RIG_FILE}: {e}")));
                continue;
            }
        };
        let timing = match dir.load_timing() {
            Ok(t) => t,
            Err(e) => {
                ds.rejected.push(reject_scene(format!("timing: {e}")));
                continue;
            }
        };
        let present = dir.thermal_indices()?;
        let frame_count = present.iter().next_back().map_or(0, |&i| i + 1);
        let has_events = dir.events_path().is_file();
        let index = ds.scenes.len();
        let mut start = 0;
        while start + group_len <= frame_count {
            let missing = (start..start + group_len).find(|k| !present.contains(k));
            let reason = match missing {
                Some(k) => Some(format!("missing thermal frame {k}")),
                None if !has_events => Some(format!("missing {EVENTS_FILE}")),
                None => None,
            };
            match reason {
                Some(reason) => ds.rejected.push(Rejection {
                    scene: name.clone(),
                    start: Some(start),
                    reason,
                }),
                None => ds.groups.push(GroupRef {
                    scene: index,
                    start,
                    len: group_len,
                }),
            }
            start += stride;
        }
        ds.scenes.push(Scene {
            dir,
            rig,
            timing,
            frame_count,
            stream: OnceLock::new(),
        });
    }
    for r in &ds.rejected {
        log::warn!("rejected {} group {:?}: {}", r.scene, r.start, r.reason);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_is_idempotent() {
        let r = Raster::from_fn(5, 4, |x, y| (x * 7 + y) as f64 / 31.0);
        let q = quantize8(&r);
        assert_eq!(quantize8(&q), q);
    }
}
