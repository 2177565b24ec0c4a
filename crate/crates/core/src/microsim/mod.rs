//! Single-approach traffic microsimulation.
//!
//! Human-driven vehicles follow the IDM, AVs execute commanded
//! accelerations, and every vehicle passes through the same safety bounds
//! before a semi-implicit Euler update.

mod episode;
mod idm;
mod safety;
mod signal;
mod sim;

use serde::{Deserialize, Serialize};

use crate::emissions::EmissionParams;

pub use episode::{run_episode, write_trace_csv, Controller, Episode, IdmController};
pub use idm::{idm_accel, IdmParams};
pub use safety::{can_stop_within, car_following_cap, max_safe_speed, red_light_bound, red_light_virtual_leader, safety_clip};
pub use signal::{Phase, SignalSchedule, SignalState};
pub use sim::{ActionMap, Simulator, Tally, TraceRow, VehicleClass, VehicleId, VehicleState, IDLE_SPEED, RUN_OUT_M};

/// Integration and actuator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Step length, s.
    pub dt: f64,
    /// Episode length, s.
    pub horizon: f64,
    /// Maximum acceleration `A`, m/s². Also bounds actions.
    pub max_accel: f64,
    /// Emergency deceleration, m/s².
    pub max_decel: f64,
    /// After the horizon, keep stepping with arrivals stopped until every
    /// vehicle has left (at most `max_drain` seconds).
    pub drain: bool,
    pub max_drain: f64,
    pub idm: IdmParams,
    pub emission: EmissionParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 120.0,
            max_accel: 3.0,
            max_decel: 4.5,
            drain: false,
            max_drain: 600.0,
            idm: IdmParams::default(),
            emission: EmissionParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(crate::Error::Config("dt must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(crate::Error::Config("horizon must be non-negative".into()));
        }
        if !(self.max_drain.is_finite() && self.max_drain >= 0.0) {
            return Err(crate::Error::Config("max_drain must be non-negative".into()));
        }
        if !(self.max_accel > 0.0 && self.max_decel > 0.0) {
            return Err(crate::Error::Config("acceleration limits must be positive".into()));
        }
        self.idm.validate()
    }

    /// Number of whole steps in the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn max_drain_steps(&self) -> usize {
        if self.drain {
            (self.max_drain / self.dt).round() as usize
        } else {
            0
        }
    }
}
