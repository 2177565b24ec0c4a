//! Nominal glide-or-keep-speed policy, observations, rewards, and residual
//! action composition.

mod nominal;
mod observation;
mod reward;

pub use nominal::{nominal_accel, nominal_target_speed, NominalController, NominalParams, TargetSpeed};
pub use observation::{build_observation, NeighborSlot, Observation, ObservationScales, OBS_DIM};
pub use reward::{step_reward, RewardConfig};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `clip(nominal + residual, -A, A)`. A zero residual returns the clipped
/// nominal command bit for bit (the sign of a zero nominal is kept).
pub fn compose_action<S: Scalar>(nominal: S, residual: S, max_accel: S) -> Result<S> {
    if !residual.is_finite() {
        return Err(Error::NonFinite("residual action".into()));
    }
    let sum = if residual == S::zero() { nominal } else { nominal + residual };
    Ok(sum.max(-max_accel).min(max_accel))
}
