//! Eco-driving benchmark: a signalized-approach microsimulator, a
//! glide-or-keep-speed nominal controller, residual actor-critic learning on
//! top of it across a family of intersection contexts, and an evaluation
//! harness for fleet emission, speed and throughput.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool.

pub mod cli;
pub mod control;
pub mod emissions;
pub mod error;
pub mod evalbench;
pub mod learner;
pub mod microsim;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision simulator.
pub type Sim = microsim::Simulator<f64>;
/// Single-precision simulator.
pub type Sim32 = microsim::Simulator<f32>;

/// Double-precision policy parameters.
pub type Policy = learner::PolicyParams<f64>;
/// Single-precision policy parameters.
pub type Policy32 = learner::PolicyParams<f32>;
