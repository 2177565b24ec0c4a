//! Benchmark harness.

mod metrics;
mod noise;
mod report;
mod run;

pub use metrics::{MetricKind, Metrics, WindowStats};
pub use noise::{noise_sweep, Noise, NoiseCurve, NoiseKind, NoisePoint, NoiseSpec, NoisyController, BIAS_STD};
pub use report::{
    compare, read_benefit_map, write_benefit_map, BenchmarkReport, BenefitRow, ContextDelta, ContextResult, DeltaSummary,
};
pub use run::{episode_seed, evaluate, make_controller, run_baseline, run_one, ControllerKind, EvalConfig, EvalRecord, Policies};
