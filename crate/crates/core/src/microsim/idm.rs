use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Intelligent Driver Model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Desired speed, m/s. The simulator overwrites this with the context speed limit.
    pub v0: f64,
    /// Time headway, s.
    pub time_headway: f64,
    /// Maximum acceleration, m/s².
    pub accel: f64,
    /// Comfortable deceleration, m/s².
    pub decel: f64,
    pub delta: f64,
    /// Jam distance, m.
    pub s0: f64,
    pub vehicle_length: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 15.0,
            time_headway: 1.6,
            accel: 0.73,
            decel: 1.67,
            delta: 4.0,
            s0: 2.0,
            vehicle_length: 5.0,
        }
    }
}

impl IdmParams {
    pub fn with_desired_speed(self, v0: f64) -> Self {
        Self { v0, ..self }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.v0, self.time_headway, self.accel, self.decel, self.delta, self.s0, self.vehicle_length];
        if all.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(crate::Error::Config("IDM parameters must be finite and positive".into()));
        }
        Ok(())
    }

    /// Desired dynamic gap `s*(v, Δv)`.
    pub fn desired_gap<S: Scalar>(&self, v: S, approach_rate: S) -> S {
        let ab = (S::lit(self.accel) * S::lit(self.decel)).sqrt();
        let dynamic = v * S::lit(self.time_headway) + v * approach_rate / (S::lit(2.0) * ab);
        S::lit(self.s0) + dynamic.max(S::zero())
    }
}

/// IDM acceleration. Pass `S::infinity()` as `gap` when there is no leader.
///
/// Panics on a non-positive gap: the simulator never lets bumpers touch.
pub fn idm_accel<S: Scalar>(ego_speed: S, gap: S, leader_speed: S, p: &IdmParams) -> S {
    assert!(gap > S::zero(), "IDM gap must be positive, got {gap}");
    let free = (ego_speed / S::lit(p.v0)).powf(S::lit(p.delta));
    let interaction = if gap.is_infinite() {
        S::zero()
    } else {
        let s_star = p.desired_gap(ego_speed, ego_speed - leader_speed);
        (s_star / gap).powi(2)
    };
    S::lit(p.accel) * (S::one() - free - interaction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn free_road_from_rest() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(0.0, f64::INFINITY, 0.0, &p), 0.73);
    }

    #[test]
    fn free_flow_equilibrium() {
        let p = IdmParams::default();
        assert!(idm_accel(15.0, f64::INFINITY, 0.0, &p).abs() < 1e-9);
        assert!(idm_accel(15.0f32, f32::INFINITY, 0.0, &p).abs() < 1e-6);
    }

    #[test]
    fn close_following_brakes() {
        // s* = 2 + 10 * 1.6 = 18 (no approach term); bracket = 1 - (10/15)^4 - (18/12)^2
        let p = IdmParams::default();
        let expected = 0.73 * (1.0 - (10.0f64 / 15.0).powi(4) - (18.0f64 / 12.0).powi(2));
        let got = idm_accel(10.0, 12.0, 10.0, &p);
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        assert_relative_eq!(got, -1.0566975308641975, max_relative = 1e-12);
        assert!(got < 0.0);
    }

    #[test]
    fn approach_term_only_when_closing() {
        let p = IdmParams::default();
        let closing = idm_accel(10.0, 30.0, 5.0, &p);
        let opening = idm_accel(10.0, 30.0, 15.0, &p);
        assert!(closing < opening);
        // 16 - 50 / (2 sqrt(ab)) < 0, so the dynamic part clamps to zero.
        assert_eq!(p.desired_gap(10.0, -5.0), 2.0);
        assert_relative_eq!(p.desired_gap(10.0, -1.0), 2.0 + 16.0 - 10.0 / (2.0 * (0.73f64 * 1.67).sqrt()));
    }

    #[test]
    #[should_panic]
    fn zero_gap_is_a_contract_violation() {
        idm_accel(5.0, 0.0, 0.0, &IdmParams::default());
    }
}
