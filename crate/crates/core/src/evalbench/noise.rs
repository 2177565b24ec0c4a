//! Actuator noise injection and noise sweeps.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{run_one, ControllerKind, EvalConfig, Policies};
use super::Metrics;
use crate::error::{Error, Result};
use crate::microsim::{ActionMap, Controller, Simulator};
use crate::scalar::Scalar;
use crate::scenario::{mix_seed, Context};

/// RNG stream of the actuator noise, distinct from the simulator's own.
const NOISE_STREAM: u64 = 0x6e6f_6973;

/// Fixed spread of the bias noise.
pub const BIAS_STD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Zero-mean, level is the standard deviation.
    Control,
    /// Level is the mean; spread fixed at [`BIAS_STD`].
    Bias,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Control => "control",
            Self::Bias => "bias",
        }
    }

    pub fn at(self, level: f64) -> Noise {
        match self {
            Self::Control => Noise { mean: 0.0, std: level },
            Self::Bias => Noise { mean: level, std: BIAS_STD },
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" => Ok(Self::Control),
            "bias" => Ok(Self::Bias),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// Gaussian added to every commanded AV acceleration, i.i.d. per AV per step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub mean: f64,
    pub std: f64,
}

impl Noise {
    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.std == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::Config(format!("invalid noise N({}, {}^2)", self.mean, self.std)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub levels: Vec<f64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("noise sweep needs at least one level".into()));
        }
        for &l in &self.levels {
            self.kind.at(l).validate()?;
        }
        Ok(())
    }
}

/// Perturbs the commands of an inner controller. The simulator still applies
/// its actuator and safety bounds to the perturbed command.
pub struct NoisyController<'a, S> {
    inner: Box<dyn Controller<S> + 'a>,
    noise: Noise,
    rng: ChaCha8Rng,
}

impl<'a, S> NoisyController<'a, S> {
    /// `episode_seed` makes the noise reproducible per episode.
    pub fn new(inner: Box<dyn Controller<S> + 'a>, noise: Noise, episode_seed: u64) -> Self {
        Self { inner, noise, rng: ChaCha8Rng::seed_from_u64(mix_seed(episode_seed, NOISE_STREAM)) }
    }
}

impl<S: Scalar> Controller<S> for NoisyController<'_, S> {
    fn act(&mut self, sim: &Simulator<S>) -> Result<ActionMap<S>> {
        let mut actions = self.inner.act(sim)?;
        if self.noise.is_zero() {
            return Ok(actions);
        }
        let dist = Normal::new(self.noise.mean, self.noise.std)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for a in actions.values_mut() {
            *a = *a + S::lit(dist.sample(&mut self.rng));
        }
        Ok(actions)
    }

    fn observe(&mut self, sim: &Simulator<S>) -> Result<()> {
        self.inner.observe(sim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub level: f64,
    /// Corpus mean of the per-context seed means.
    pub metrics: Metrics,
    /// Change of mean total emission relative to the reference level, %.
    pub emission_change_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurve {
    pub controller: ControllerKind,
    pub noise: NoiseKind,
    pub points: Vec<NoisePoint>,
}

impl NoiseCurve {
    /// Relative emission change at `level`, if swept.
    pub fn change_at(&self, level: f64) -> Option<f64> {
        self.points.iter().find(|p| p.level == level).map(|p| p.emission_change_pct)
    }
}

/// Runs `kind` on every context and seed at each noise level.
pub fn noise_sweep<S: Scalar>(
    kind: ControllerKind,
    corpus: &[Context],
    spec: &NoiseSpec,
    cfg: &EvalConfig,
    policies: &Policies<'_, S>,
) -> Result<NoiseCurve> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let per_level = spec
        .levels
        .iter()
        .map(|&level| {
            let noise = spec.kind.at(level);
            let jobs: Vec<(usize, u64)> =
                (0..corpus.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
            let runs = jobs
                .par_iter()
                .map(|&(c, s)| run_one(kind, &corpus[c], s, cfg, policies, Some(noise)))
                .collect::<Result<Vec<_>>>()?;
            let per_context: Vec<Metrics> = runs.chunks(cfg.seeds.len().max(1)).map(Metrics::mean).collect();
            Ok(Metrics::mean(&per_context))
        })
        .collect::<Result<Vec<_>>>()?;
    // Reference: the noise-free level 0 if swept, else the first level.
    let reference = spec.levels.iter().position(|&l| l == 0.0).unwrap_or(0);
    let base = per_level[reference].total_emission;
    let points = spec
        .levels
        .iter()
        .zip(per_level)
        .map(|(&level, metrics)| {
            let emission_change_pct =
                if base > 0.0 { (metrics.total_emission - base) / base * 100.0 } else { f64::NAN };
            NoisePoint { level, metrics, emission_change_pct }
        })
        .collect();
    Ok(NoiseCurve { controller: kind, noise: spec.kind, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_corpus, ContextSpace};

    fn corpus() -> Vec<Context> {
        generate_corpus(&ContextSpace::with_penetration(1.0), 2, 11).unwrap()
    }

    #[test]
    fn zero_control_noise_is_the_clean_run() {
        let cfg = EvalConfig { seeds: vec![0, 1], ..Default::default() };
        let none = Policies::<f64>::default();
        let spec = NoiseSpec { kind: NoiseKind::Control, levels: vec![0.0] };
        let curve = noise_sweep(ControllerKind::Nominal, &corpus(), &spec, &cfg, &none).unwrap();
        let clean: Vec<Metrics> =
            corpus().iter().map(|c| super::super::run_baseline(ControllerKind::Nominal, c, &cfg, &none).unwrap()).collect();
        assert_eq!(curve.points[0].metrics, Metrics::mean(&clean));
        assert_eq!(curve.points[0].emission_change_pct, 0.0);
    }

    #[test]
    fn noise_is_reproducible_and_changes_the_run() {
        let cfg = EvalConfig { seeds: vec![2], ..Default::default() };
        let none = Policies::<f64>::default();
        let ctx = &corpus()[0];
        let n = NoiseKind::Control.at(0.3);
        let a = run_one(ControllerKind::Nominal, ctx, 2, &cfg, &none, Some(n)).unwrap();
        let b = run_one(ControllerKind::Nominal, ctx, 2, &cfg, &none, Some(n)).unwrap();
        let clean = run_one(ControllerKind::Nominal, ctx, 2, &cfg, &none, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
    }

    #[test]
    fn negative_bias_adds_idling() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(1.0), 4, 3).unwrap();
        let cfg = EvalConfig { seeds: vec![0, 1, 2], ..Default::default() };
        let spec = NoiseSpec { kind: NoiseKind::Bias, levels: vec![-0.5, 0.0] };
        let curve = noise_sweep(ControllerKind::Nominal, &corpus, &spec, &cfg, &Policies::<f64>::default()).unwrap();
        let idle = |i: usize| curve.points[i].metrics.idling_time_per_vehicle;
        assert!(idle(0) > idle(1), "{} vs {}", idle(0), idle(1));
        assert_eq!(curve.change_at(0.0), Some(0.0));
    }

    #[test]
    fn invalid_specs() {
        let bad = NoiseSpec { kind: NoiseKind::Control, levels: vec![0.1, -0.2] };
        assert!(bad.validate().is_err());
        assert!(NoiseSpec { kind: NoiseKind::Bias, levels: vec![] }.validate().is_err());
        assert!(NoiseSpec { kind: NoiseKind::Bias, levels: vec![-0.5] }.validate().is_ok());
        assert_eq!("Bias".parse::<NoiseKind>().unwrap(), NoiseKind::Bias);
    }
}
