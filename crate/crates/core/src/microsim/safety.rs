//! Acceleration bounds that keep the simulation collision-free.

use crate::scalar::Scalar;

use super::signal::{Phase, SignalState};
use super::{idm_accel, IdmParams, SimConfig};

/// Largest next-step speed such that, if the leader brakes at `max_decel`
/// from now and the ego brakes at `max_decel` from the next step, the ego
/// stops at least `margin` behind the leader's stopping point.
pub fn max_safe_speed<S: Scalar>(gap: S, leader_speed: S, margin: S, max_decel: S, dt: S) -> S {
    let budget = gap - margin + leader_speed * leader_speed / (S::lit(2.0) * max_decel);
    if budget <= S::zero() {
        return S::zero();
    }
    let bdt = max_decel * dt;
    (bdt * bdt + S::lit(2.0) * max_decel * budget).sqrt() - bdt
}

/// Bounds a proposed acceleration by the leader constraint and by
/// `[-max_decel, max_accel]`; never commands a negative next-step speed.
///
/// `leader` is `(bumper gap, leader speed)`.
pub fn safety_clip<S: Scalar>(proposed: S, ego_speed: S, leader: Option<(S, S)>, cfg: &SimConfig) -> S {
    let dt = S::lit(cfg.dt);
    let b = S::lit(cfg.max_decel);
    let mut a = proposed;
    if let Some((gap, leader_speed)) = leader {
        let v_next = max_safe_speed(gap, leader_speed, S::lit(cfg.idm.s0), b, dt);
        a = a.min((v_next - ego_speed) / dt);
    }
    a.max(-b).min(S::lit(cfg.max_accel)).max(-ego_speed / dt)
}

/// Braking demanded by the car-following model, if any.
///
/// Commanded accelerations are never allowed above the IDM response to the
/// real leader when that response is a deceleration, the way a microsim's
/// car-following layer overrides external speed commands.
pub fn car_following_cap<S: Scalar>(ego_speed: S, leader: Option<(S, S)>, idm: &IdmParams, cfg: &SimConfig) -> Option<S> {
    let (gap, leader_speed) = leader?;
    let a = idm_accel(ego_speed, gap, leader_speed, idm);
    (a < S::zero()).then(|| a.max(-S::lit(cfg.max_decel)))
}

/// The red signal as a stopped leader at the stop line.
///
/// Returns `(gap, leader_speed = 0)` while red and the vehicle is upstream of
/// the line, `None` otherwise.
pub fn red_light_virtual_leader<S: Scalar>(position: S, signal: &SignalState<S>, lane_length: S) -> Option<(S, S)> {
    match signal.phase {
        Phase::Red if position < lane_length => Some((lane_length - position, S::zero())),
        _ => None,
    }
}

/// Whether a vehicle at `speed` can still stop within `distance` at `max_decel`.
pub fn can_stop_within<S: Scalar>(speed: S, distance: S, max_decel: S) -> bool {
    speed * speed / (S::lit(2.0) * max_decel) <= distance
}

/// Upper acceleration bound that keeps a vehicle from entering the
/// intersection on red.
///
/// The vehicle may either stay able to stop at the line, or travel no faster
/// than `distance / time_to_green`, which guarantees it reaches the line no
/// earlier than green onset. Returns `None` when no bound applies: green, past
/// the line, or already unable to stop when the red began.
pub fn red_light_bound<S: Scalar>(speed: S, distance: S, signal: &SignalState<S>, cfg: &SimConfig) -> Option<S> {
    if signal.phase != Phase::Red || distance <= S::zero() {
        return None;
    }
    let b = S::lit(cfg.max_decel);
    if !can_stop_within(speed, distance, b) {
        return None;
    }
    let dt = S::lit(cfg.dt);
    let stop = (max_safe_speed(distance, S::zero(), S::zero(), b, dt) - speed) / dt;
    let ttg = signal.time_to_green();
    let pace = if ttg > S::zero() {
        (distance / ttg - speed) / dt
    } else {
        S::infinity()
    };
    Some(stop.max(pace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::signal::SignalSchedule;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn unconstrained_passes_through() {
        assert_eq!(safety_clip(2.0, 10.0, None, &cfg()), 2.0);
        assert_eq!(safety_clip(2.0, 10.0, Some((500.0, 10.0)), &cfg()), 2.0);
    }

    #[test]
    fn clips_to_actuator_limits() {
        assert_eq!(safety_clip(7.0, 10.0, None, &cfg()), 3.0);
        assert_eq!(safety_clip(-9.0, 10.0, None, &cfg()), -4.5);
        // Cannot brake below zero speed.
        assert_eq!(safety_clip(-4.0, 0.2, None, &cfg()), -2.0);
    }

    #[test]
    fn stopped_leader_at_jam_gap_forces_braking() {
        // budget = s0 - s0 + 0 = 0 -> next speed 0 -> a = -v/dt, clipped to -4.5
        let a = safety_clip(1.0, 5.0, Some((2.0, 0.0)), &cfg());
        assert_eq!(a, -4.5);
        let a = safety_clip(1.0, 0.0, Some((2.0, 0.0)), &cfg());
        assert_eq!(a, 0.0);
    }

    #[test]
    fn safe_speed_hand_value() {
        // gap 22, margin 2, leader at rest, b = 4.5, dt = 0.1:
        // v dt + v^2 / 9 = 20 -> v = -0.45 + sqrt(0.2025 + 180)
        let v = max_safe_speed(22.0, 0.0, 2.0, 4.5, 0.1);
        assert!((v - (-0.45 + 180.2025f64.sqrt())).abs() < 1e-12);
        assert!((v * 0.1 + v * v / 9.0 - 20.0).abs() < 1e-9);
    }

    #[test]
    fn virtual_leader_only_on_red() {
        let red = SignalSchedule::new(25.0, 30.0, 0.0).state_at(1.0);
        let green = SignalSchedule::new(25.0, 30.0, 0.0).state_at(40.0);
        assert_eq!(red_light_virtual_leader(90.0, &red, 100.0), Some((10.0, 0.0)));
        assert_eq!(red_light_virtual_leader(90.0, &green, 100.0), None);
        assert_eq!(red_light_virtual_leader(101.0, &red, 100.0), None);
    }

    #[test]
    fn red_bound_allows_pacing_to_green() {
        let sched = SignalSchedule::new(25.0, 30.0, 0.0);
        // 10 s to green, 100 m away at 10 m/s: pacing keeps 10 m/s allowed.
        let st = sched.state_at(20.0);
        let bound = red_light_bound(10.0, 100.0, &st, &cfg()).unwrap();
        assert!(bound >= 0.0);
        // Too close to stop once red began: no bound.
        assert_eq!(red_light_bound(15.0, 10.0, &st, &cfg()), None);
        assert_eq!(red_light_bound(10.0, 100.0, &sched.state_at(40.0), &cfg()), None);
    }
}
