//! Instantaneous emission surrogate and trip integration.
//!
//! The rate is an idle floor plus a term linear in positive tractive power:
//!
//! ```text
//! P(v, a) = v * (roll + drag * v^2) + mass * v * a      [W]
//! E(v, a) = beta0 + beta1 * max(0, P) / 1000            [g/s]
//! ```
//!
//! Braking and standing still both emit exactly `beta0`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionParams {
    /// Idle floor, g/s.
    pub beta0: f64,
    /// g per kJ of positive tractive work.
    pub beta1: f64,
    /// kg.
    pub mass: f64,
    /// Rolling resistance, N.
    pub roll_coeff: f64,
    /// Aerodynamic coefficient, N·s²/m².
    pub drag_coeff: f64,
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            beta0: 0.12,
            beta1: 0.09,
            mass: 1200.0,
            roll_coeff: 150.0,
            drag_coeff: 0.45,
        }
    }
}

impl EmissionParams {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.beta0, self.beta1, self.mass, self.roll_coeff, self.drag_coeff];
        if !(self.beta0 > 0.0) || all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(crate::Error::Config(
                "emission coefficients must be finite, non-negative, with beta0 > 0".into(),
            ));
        }
        Ok(())
    }

    /// Tractive power in watts; negative while braking.
    pub fn tractive_power<S: Scalar>(&self, v: S, a: S) -> S {
        v * (S::lit(self.roll_coeff) + S::lit(self.drag_coeff) * v * v) + S::lit(self.mass) * v * a
    }
}

/// Emission rate in g/s for speed `v` (m/s) and acceleration `a` (m/s²).
///
/// Panics if `v` is negative.
pub fn instantaneous_emission<S: Scalar>(v: S, a: S, p: &EmissionParams) -> S {
    assert!(v >= S::zero(), "negative speed {v} passed to the emission model");
    let power = p.tractive_power(v, a).max(S::zero());
    S::lit(p.beta0) + S::lit(p.beta1) * power / S::lit(1000.0)
}

/// Left-endpoint integral of the emission rate over a `(v, a)` trace, grams.
pub fn trip_emission<S, I>(trace: I, dt: S, p: &EmissionParams) -> S
where
    S: Scalar,
    I: IntoIterator<Item = (S, S)>,
{
    assert!(dt > S::zero(), "dt must be positive");
    trace
        .into_iter()
        .map(|(v, a)| instantaneous_emission(v, a, p) * dt)
        .fold(S::zero(), |acc, e| acc + e)
}
