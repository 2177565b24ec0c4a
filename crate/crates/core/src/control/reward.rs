use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// `v + w1 * e` on normalized speed and emission.
pub fn step_reward<S: Scalar>(v_norm: S, e_norm: S, w1: S) -> S {
    v_norm + w1 * e_norm
}

/// Reward weighting and normalization.
///
/// Speed is divided by the context speed limit and the emission rate by
/// `emission_scale * beta0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub w1: f64,
    pub emission_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w1: -7.57, emission_scale: 10.0 }
    }
}

impl RewardConfig {
    /// Reward for raw speed (m/s) and emission rate (g/s).
    pub fn reward<S: Scalar>(&self, speed: S, emission: S, speed_limit: f64, beta0: f64) -> S {
        step_reward(
            speed / S::lit(speed_limit),
            emission / S::lit(self.emission_scale * beta0),
            S::lit(self.w1),
        )
    }
}
