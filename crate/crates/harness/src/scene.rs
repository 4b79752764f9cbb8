//! On-disk scene layout:
//!
//! ```text
//! <scene>/thermal/000000.png   8-bit gray, one per thermal-clock tick
//! <scene>/events.csv           t,x,y,p records in event-camera pixels
//! <scene>/rig.json             RigCalibration
//! <scene>/scene.json           optional clock (period_us, t0, window_us)
//! <scene>/{masks,sis_gt,tcc_gt}/000000.png   pseudo ground-truth cache
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uta_core::calib::RigCalibration;
use uta_core::events::{read_events_csv, write_events_csv, EventStream, FrameClock};
use uta_core::simgen::{simulate_stream, RgbFrame, SimConfig};
use uta_core::Raster;

use crate::error::{Error, Result};

pub const THERMAL_DIR: &str = "thermal";
pub const EVENTS_FILE: &str = "events.csv";
pub const RIG_FILE: &str = "rig.json";
pub const TIMING_FILE: &str = "scene.json";
pub const MASKS_DIR: &str = "masks";
pub const SIS_GT_DIR: &str = "sis_gt";
pub const TCC_GT_DIR: &str = "tcc_gt";

/// Thermal clock and event aggregation window of a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTiming {
    pub period_us: u64,
    pub t0: u64,
    pub window_us: u64,
}

impl SceneTiming {
    pub fn from_sim(cfg: &SimConfig) -> Self {
        let clock = cfg.clock();
        Self {
            period_us: clock.period_us,
            t0: clock.t0,
            window_us: cfg.window_us,
        }
    }

    pub fn clock(&self) -> FrameClock {
        FrameClock {
            period_us: self.period_us,
            t0: self.t0,
        }
    }
}

impl Default for SceneTiming {
    fn default() -> Self {
        Self::from_sim(&SimConfig::default())
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Index encoded in a `%06d.png` name.
pub fn parse_frame_file_name(name: &str) -> Option<usize> {
    let stem = name.strip_suffix(".png")?;
    if stem.len() != 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Paths inside one scene directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneDir {
    root: PathBuf,
}

impl SceneDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn name(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn thermal_dir(&self) -> PathBuf {
        self.root.join(THERMAL_DIR)
    }

    pub fn thermal_path(&self, index: usize) -> PathBuf {
        self.thermal_dir().join(frame_file_name(index))
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join(EVENTS_FILE)
    }

    pub fn rig_path(&self) -> PathBuf {
        self.root.join(RIG_FILE)
    }

    pub fn timing_path(&self) -> PathBuf {
        self.root.join(TIMING_FILE)
    }

    pub fn cache_path(&self, kind: &str, index: usize) -> PathBuf {
        self.root.join(kind).join(frame_file_name(index))
    }

    /// Indices of the thermal frames present, ascending.
    pub fn thermal_indices(&self) -> Result<BTreeSet<usize>> {
        let dir = self.thermal_dir();
        if !dir.is_dir() {
            return Ok(BTreeSet::new());
        }
        let mut out = BTreeSet::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            if let Some(i) = parse_frame_file_name(&name.to_string_lossy()) {
                out.insert(i);
            }
        }
        Ok(out)
    }

    pub fn load_rig(&self) -> Result<RigCalibration> {
        Ok(RigCalibration::load(self.rig_path())?)
    }

    pub fn load_timing(&self) -> Result<SceneTiming> {
        let path = self.timing_path();
        if !path.exists() {
            return Ok(SceneTiming::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn load_events(&self) -> Result<EventStream> {
        let file = File::open(self.events_path())?;
        Ok(read_events_csv(BufReader::new(file))?)
    }

    pub fn load_thermal(&self, index: usize) -> Result<Raster> {
        Ok(Raster::load_gray(self.thermal_path(index))?)
    }
}

/// Writes a complete scene. Thermal frames are stored 8-bit.
pub fn write_scene(
    dir: &SceneDir,
    thermal: &[Raster],
    events: &EventStream,
    rig: &RigCalibration,
    timing: &SceneTiming,
) -> Result<()> {
    if thermal.is_empty() {
        return Err(Error::Dataset("a scene needs at least one thermal frame".into()));
    }
    std::fs::create_dir_all(dir.thermal_dir())?;
    for (k, frame) in thermal.iter().enumerate() {
        if frame.dims() != rig.ir_resolution {
            return Err(Error::Dataset(format!(
                "thermal frame {k} is {:?}, rig says {:?}",
                frame.dims(),
                rig.ir_resolution
            )));
        }
        frame.save_png(dir.thermal_path(k))?;
    }
    let mut w = BufWriter::new(File::create(dir.events_path())?);
    write_events_csv(events.records(), &mut w)?;
    drop(w);
    rig.save(dir.rig_path())?;
    std::fs::write(dir.timing_path(), serde_json::to_string_pretty(timing)?)?;
    Ok(())
}

/// Simulates a thermal/event scene from color frames and writes it.
pub fn simgen_scene(frames: &[RgbFrame], sim: &SimConfig, rig: &RigCalibration, dir: &SceneDir) -> Result<()> {
    let (thermal, stream) = simulate_stream(frames, sim, rig)?;
    write_scene(dir, &thermal, &stream, rig, &SceneTiming::from_sim(sim))
}

/// Color frames from a directory of PNG images, in file-name order.
pub fn load_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<RgbFrame>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    });
    paths.sort();
    paths.iter().map(|p| Ok(RgbFrame::load(p)?)).collect()
}
