use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microsim::{Phase, Simulator, VehicleId, VehicleState};
use crate::scalar::Scalar;

/// Length of the normalized feature vector.
pub const OBS_DIM: usize = 2 + 6 * 3 + 2 + 1 + 5;

/// Divisors mapping raw features into `[-1, 1]` (values are then clamped).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationScales {
    pub speed: f64,
    pub distance: f64,
    pub gap: f64,
    pub time: f64,
    pub lanes: f64,
}

impl Default for ObservationScales {
    fn default() -> Self {
        Self { speed: 20.0, distance: 400.0, gap: 100.0, time: 30.0, lanes: 3.0 }
    }
}

/// Neighbour feature slot. `gap` is bumper to bumper; `rel_speed` is
/// neighbour speed minus ego speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborSlot<S> {
    pub gap: S,
    pub rel_speed: S,
    pub present: bool,
}

impl<S: Scalar> NeighborSlot<S> {
    fn absent() -> Self {
        Self { gap: S::zero(), rel_speed: S::zero(), present: false }
    }
}

/// Raw (unnormalized) policy input for one AV.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<S> {
    pub ego_speed: S,
    pub ego_distance_to_stop: S,
    /// Same lane, left lane, right lane; leader then follower in each.
    pub neighbors: [NeighborSlot<S>; 6],
    pub phase: Phase,
    pub time_remaining: S,
    pub lane_length: S,
    pub speed_limit: S,
    pub green_s: S,
    pub red_s: S,
    pub lane_count: S,
}

impl<S: Scalar> Observation<S> {
    pub fn features(&self, scales: &ObservationScales) -> [S; OBS_DIM] {
        let norm = |x: S, scale: f64| (x / S::lit(scale)).max(-S::one()).min(S::one());
        let flag = |b: bool| if b { S::one() } else { S::zero() };
        let mut f = [S::zero(); OBS_DIM];
        f[0] = norm(self.ego_speed, scales.speed);
        f[1] = norm(self.ego_distance_to_stop, scales.distance);
        for (k, slot) in self.neighbors.iter().enumerate() {
            f[2 + 3 * k] = norm(slot.gap, scales.gap);
            f[3 + 3 * k] = norm(slot.rel_speed, scales.speed);
            f[4 + 3 * k] = flag(slot.present);
        }
        f[20] = flag(self.phase == Phase::Green);
        f[21] = flag(self.phase == Phase::Red);
        f[22] = norm(self.time_remaining, scales.time);
        f[23] = norm(self.lane_length, scales.distance);
        f[24] = norm(self.speed_limit, scales.speed);
        f[25] = norm(self.green_s, scales.time);
        f[26] = norm(self.red_s, scales.time);
        f[27] = norm(self.lane_count, scales.lanes);
        f
    }
}

fn slots<S: Scalar>(
    sim: &Simulator<S>,
    lane: Option<usize>,
    ego: &VehicleState<S>,
) -> [NeighborSlot<S>; 2] {
    let Some(lane) = lane else {
        return [NeighborSlot::absent(); 2];
    };
    let len = S::lit(sim.idm().vehicle_length);
    let (ahead, behind) = sim.neighbors(lane, ego.position, ego.id);
    let leader = ahead.map_or(NeighborSlot::absent(), |v| NeighborSlot {
        gap: v.position - len - ego.position,
        rel_speed: v.speed - ego.speed,
        present: true,
    });
    let follower = behind.map_or(NeighborSlot::absent(), |v| NeighborSlot {
        gap: ego.position - len - v.position,
        rel_speed: v.speed - ego.speed,
        present: true,
    });
    [leader, follower]
}

/// Observation of vehicle `id` in the current state.
pub fn build_observation<S: Scalar>(sim: &Simulator<S>, id: VehicleId) -> Result<Observation<S>> {
    let ego = sim.vehicle(id).ok_or(Error::UnknownVehicle(id))?;
    let lanes = sim.lane_count();
    let left = (ego.lane + 1 < lanes).then_some(ego.lane + 1);
    let right = ego.lane.checked_sub(1);
    let [a, b] = slots(sim, Some(ego.lane), ego);
    let [c, d] = slots(sim, left, ego);
    let [e, f] = slots(sim, right, ego);
    let signal = sim.signal();
    let ctx = sim.context();
    Ok(Observation {
        ego_speed: ego.speed,
        ego_distance_to_stop: sim.lane_length() - ego.position,
        neighbors: [a, b, c, d, e, f],
        phase: signal.phase,
        time_remaining: signal.time_remaining,
        lane_length: S::lit(ctx.lane_length),
        speed_limit: S::lit(ctx.speed_limit),
        green_s: S::lit(ctx.green_s),
        red_s: S::lit(ctx.red_s),
        lane_count: S::lit(ctx.lane_count as f64),
    })
}
