use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microsim::{ActionMap, Controller, Simulator, VehicleId};
use crate::scalar::Scalar;

/// Output of the glide-or-keep-speed rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetSpeed<S> {
    /// Current speed reaches the line inside the green window.
    Keep(S),
    /// Slow down to arrive exactly at green onset.
    Glide(S),
    /// Neither applies; drive like a human (IDM).
    Idm,
}

impl<S: Copy> TargetSpeed<S> {
    pub fn speed(&self) -> Option<S> {
        match *self {
            Self::Keep(v) | Self::Glide(v) => Some(v),
            Self::Idm => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalParams {
    /// Speed-tracking gain, 1/s.
    pub k_p: f64,
    /// Extra seconds added to the time-to-green when gliding.
    pub glide_margin: f64,
}

impl Default for NominalParams {
    fn default() -> Self {
        Self { k_p: 0.8, glide_margin: 0.0 }
    }
}

impl NominalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_p.is_finite() && self.k_p > 0.0) || !(self.glide_margin >= 0.0) {
            return Err(Error::Config("k_p must be positive and glide_margin non-negative".into()));
        }
        Ok(())
    }
}

/// Glide-or-keep-speed target for a vehicle `distance` metres from the stop
/// line at `speed`, with `time_to_green` seconds until green onset (zero while
/// green) and a green window of `green_window` seconds after that.
///
/// A stopped vehicle has infinite time-to-line; it glides if a green onset is
/// pending and otherwise falls back to the IDM.
pub fn nominal_target_speed<S: Scalar>(speed: S, distance: S, time_to_green: S, green_window: S) -> TargetSpeed<S> {
    let time_to_end = time_to_green + green_window;
    if speed <= S::zero() {
        return if time_to_green > S::zero() {
            TargetSpeed::Glide(distance / time_to_green)
        } else {
            TargetSpeed::Idm
        };
    }
    let time_to_line = distance / speed;
    if time_to_green <= time_to_line && time_to_line <= time_to_end {
        TargetSpeed::Keep(speed)
    } else if time_to_green >= time_to_line {
        TargetSpeed::Glide(distance / time_to_green)
    } else {
        TargetSpeed::Idm
    }
}

/// Nominal acceleration command for an AV: proportional tracking of the
/// target speed, or the IDM past the stop line and in the fallback branch.
/// Always within `[-A, A]`.
pub fn nominal_accel<S: Scalar>(sim: &Simulator<S>, id: VehicleId, params: &NominalParams) -> Result<S> {
    let v = sim.vehicle(id).ok_or(Error::UnknownVehicle(id))?;
    let a_max = S::lit(sim.config().max_accel);
    let clip = |a: S| a.max(-a_max).min(a_max);
    let distance = sim.lane_length() - v.position;
    if distance <= S::zero() {
        return sim.idm_proposal(id).map(clip);
    }
    let t = sim.clock();
    let ttg = sim.schedule().time_to_green(t);
    let ttg = if ttg > S::zero() { ttg + S::lit(params.glide_margin) } else { ttg };
    match nominal_target_speed(v.speed, distance, ttg, sim.schedule().green_window(t)) {
        TargetSpeed::Keep(target) | TargetSpeed::Glide(target) => Ok(clip(S::lit(params.k_p) * (target - v.speed))),
        TargetSpeed::Idm => sim.idm_proposal(id).map(clip),
    }
}

/// Every AV runs the nominal policy.
#[derive(Clone, Copy, Debug, Default)]
pub struct NominalController {
    pub params: NominalParams,
}

impl<S: Scalar> Controller<S> for NominalController {
    fn act(&mut self, sim: &Simulator<S>) -> Result<ActionMap<S>> {
        sim.active_avs()
            .into_iter()
            .map(|id| Ok((id, nominal_accel(sim, id, &self.params)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::{SimConfig, VehicleClass};
    use crate::scenario::Context;

    #[test]
    fn keep_speed_branch() {
        assert_eq!(nominal_target_speed(10.0, 100.0, 5.0, 25.0), TargetSpeed::Keep(10.0));
    }

    #[test]
    fn glide_branch() {
        assert_eq!(nominal_target_speed(5.0, 100.0, 25.0, 25.0), TargetSpeed::Glide(4.0));
    }

    #[test]
    fn idm_branch() {
        assert_eq!(nominal_target_speed(2.0, 100.0, 5.0, 25.0), TargetSpeed::<f64>::Idm);
    }

    #[test]
    fn stopped_vehicle() {
        assert_eq!(nominal_target_speed(0.0, 50.0, 10.0, 25.0), TargetSpeed::Glide(5.0));
        assert_eq!(nominal_target_speed(0.0, 50.0, 0.0, 25.0), TargetSpeed::<f64>::Idm);
    }

    fn single(position: f64, speed: f64, offset: f64) -> (Simulator<f64>, VehicleId) {
        let ctx = Context {
            lane_length: 200.0,
            inflow: 0.0,
            speed_limit: 12.0,
            lane_count: 1,
            green_s: 25.0,
            red_s: 30.0,
            phase_offset: offset,
            penetration: 1.0,
            seed: 0,
        };
        let mut sim = Simulator::new(&ctx, &SimConfig::default(), 0).unwrap();
        sim.set_spawning(false);
        let id = sim.insert_vehicle(0, VehicleClass::Av, position, speed).unwrap();
        (sim, id)
    }

    #[test]
    fn proportional_law() {
        // 100 m out at 10 m/s, 5 s to green: keep speed.
        let (sim, id) = single(100.0, 10.0, 25.0);
        assert_eq!(nominal_accel(&sim, id, &NominalParams::default()).unwrap(), 0.0);
        // 100 m out at 5 m/s, 25 s to green: glide target 4 m/s.
        let (sim, id) = single(100.0, 5.0, 5.0);
        let a = nominal_accel(&sim, id, &NominalParams::default()).unwrap();
        assert!((a - -0.8).abs() < 1e-12, "{a}");
    }

    #[test]
    fn past_stop_line_uses_idm() {
        let (sim, id) = single(210.0, 6.0, 0.0);
        let a = nominal_accel(&sim, id, &NominalParams::default()).unwrap();
        assert_eq!(a, sim.idm_proposal(id).unwrap().clamp(-3.0, 3.0));
    }
}
