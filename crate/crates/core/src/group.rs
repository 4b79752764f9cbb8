use crate::error::{Error, Result};
use crate::events::EventFrame;
use crate::raster::ThermalFrame;

/// Temporally aligned (thermal, event) pairs, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGroup {
    pub thermal: Vec<ThermalFrame>,
    pub events: Vec<EventFrame>,
}

impl FrameGroup {
    pub fn new(thermal: Vec<ThermalFrame>, events: Vec<EventFrame>) -> Result<Self> {
        if thermal.len() != events.len() {
            return Err(Error::InvalidArgument(format!(
                "{} thermal frames but {} event frames",
                thermal.len(),
                events.len()
            )));
        }
        if thermal.is_empty() {
            return Err(Error::InsufficientFrames {
                found: 0,
                required: 1,
            });
        }
        for f in &thermal[1..] {
            thermal[0].ensure_same_dims(f)?;
        }
        for e in &events[1..] {
            events[0].pixels.ensure_same_dims(&e.pixels)?;
        }
        Ok(Self { thermal, events })
    }

    pub fn len(&self) -> usize {
        self.thermal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thermal.is_empty()
    }

    pub fn thermal_dims(&self) -> (usize, usize) {
        self.thermal[0].dims()
    }

    pub fn event_dims(&self) -> (usize, usize) {
        self.events[0].dims()
    }
}
