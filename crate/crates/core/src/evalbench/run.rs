//! Paired episode runs for every controller family.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noise::{Noise, NoisyController};
use super::Metrics;
use crate::control::{NominalController, NominalParams};
use crate::error::{Error, Result};
use crate::learner::{PolicyController, PolicyMode, PolicyParams};
use crate::microsim::{run_episode, Controller, IdmController, SimConfig};
use crate::scalar::Scalar;
use crate::scenario::{mix_seed, Context};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// AVs drive exactly like humans.
    Idm,
    Nominal,
    Multitask,
    Mrtl,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Idm, Self::Nominal, Self::Multitask, Self::Mrtl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Idm => "idm",
            Self::Nominal => "nominal",
            Self::Multitask => "multitask",
            Self::Mrtl => "mrtl",
        }
    }

    pub fn needs_params(self) -> bool {
        matches!(self, Self::Multitask | Self::Mrtl)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "idm" => Ok(Self::Idm),
            "nominal" => Ok(Self::Nominal),
            "multitask" | "multi-task" => Ok(Self::Multitask),
            "mrtl" => Ok(Self::Mrtl),
            other => Err(Error::Config(format!("unknown controller `{other}`"))),
        }
    }
}

/// Shared evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub sim: SimConfig,
    pub nominal: NominalParams,
    /// Evaluation seed indices; each is mixed with the context seed.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { sim: SimConfig::default(), nominal: NominalParams::default(), seeds: (0..5).collect() }
    }
}

/// Trained parameters for the learned controllers.
#[derive(Clone, Copy, Debug)]
pub struct Policies<'a, S> {
    pub mrtl: Option<&'a PolicyParams<S>>,
    pub multitask: Option<&'a PolicyParams<S>>,
}

impl<S> Default for Policies<'_, S> {
    fn default() -> Self {
        Self { mrtl: None, multitask: None }
    }
}

impl<'a, S: Scalar> Policies<'a, S> {
    fn get(&self, kind: ControllerKind) -> Result<Option<&'a PolicyParams<S>>> {
        let (slot, mode, name) = match kind {
            ControllerKind::Mrtl => (self.mrtl, PolicyMode::Mrtl, "mrtl"),
            ControllerKind::Multitask => (self.multitask, PolicyMode::Multitask, "multitask"),
            _ => return Ok(None),
        };
        let p = slot.ok_or(Error::MissingParams(name))?;
        if p.mode != mode {
            return Err(Error::Config(format!("{name} controller given a {} checkpoint", p.mode.as_str())));
        }
        Ok(Some(p))
    }
}

/// Simulator seed of evaluation run `seed` on `ctx`.
pub fn episode_seed(ctx: &Context, seed: u64) -> u64 {
    mix_seed(ctx.seed, seed)
}

pub fn make_controller<'a, S: Scalar>(
    kind: ControllerKind,
    policies: &Policies<'a, S>,
    nominal: NominalParams,
) -> Result<Box<dyn Controller<S> + 'a>> {
    Ok(match kind {
        ControllerKind::Idm => Box::new(IdmController),
        ControllerKind::Nominal => Box::new(NominalController { params: nominal }),
        ControllerKind::Multitask | ControllerKind::Mrtl => {
            let p = policies.get(kind)?.expect("learned kinds carry parameters");
            Box::new(PolicyController::new(p.clone(), nominal))
        }
    })
}

/// One episode of `kind` on `ctx`, optionally with actuator noise.
pub fn run_one<S: Scalar>(
    kind: ControllerKind,
    ctx: &Context,
    seed: u64,
    cfg: &EvalConfig,
    policies: &Policies<'_, S>,
    noise: Option<Noise>,
) -> Result<Metrics> {
    let inner = make_controller(kind, policies, cfg.nominal)?;
    let es = episode_seed(ctx, seed);
    let episode = match noise {
        Some(n) if !n.is_zero() => {
            let mut c = NoisyController::new(inner, n, es);
            run_episode::<S, _>(ctx, &cfg.sim, es, &mut c, false)?
        }
        _ => {
            let mut c = inner;
            run_episode::<S, _>(ctx, &cfg.sim, es, c.as_mut(), false)?
        }
    };
    Ok(episode.metrics)
}

/// Metrics of `kind` on `ctx`, averaged over `cfg.seeds`.
pub fn run_baseline<S: Scalar>(
    kind: ControllerKind,
    ctx: &Context,
    cfg: &EvalConfig,
    policies: &Policies<'_, S>,
) -> Result<Metrics> {
    let runs = cfg.seeds.iter().map(|&s| run_one(kind, ctx, s, cfg, policies, None)).collect::<Result<Vec<_>>>()?;
    Ok(Metrics::mean(&runs))
}

/// Metrics of a single (controller, context, seed) episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub kind: ControllerKind,
    pub context: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Every kind on every context and seed, in parallel. Records come back in
/// (kind, context, seed) order.
pub fn evaluate<S: Scalar>(
    corpus: &[Context],
    kinds: &[ControllerKind],
    cfg: &EvalConfig,
    policies: &Policies<'_, S>,
) -> Result<Vec<EvalRecord>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for &k in kinds {
        policies.get(k)?;
    }
    let jobs: Vec<(ControllerKind, usize, u64)> = kinds
        .iter()
        .flat_map(|&k| (0..corpus.len()).flat_map(move |c| cfg.seeds.iter().map(move |&s| (k, c, s))))
        .collect();
    jobs.par_iter()
        .map(|&(kind, context, seed)| {
            let metrics = run_one(kind, &corpus[context], seed, cfg, policies, None)?;
            Ok(EvalRecord { kind, context, seed, metrics })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_corpus, ContextSpace};

    #[test]
    fn idm_kind_ignores_penetration() {
        let ctx = generate_corpus(&ContextSpace::default(), 1, 5).unwrap().remove(0);
        let cfg = EvalConfig { seeds: vec![0, 1], ..Default::default() };
        let none = Policies::<f64>::default();
        let full = run_baseline(ControllerKind::Idm, &ctx.with_penetration(1.0), &cfg, &none).unwrap();
        let zero = run_baseline(ControllerKind::Idm, &ctx.with_penetration(0.0), &cfg, &none).unwrap();
        assert_eq!(full, zero);
    }

    #[test]
    fn deterministic_and_requires_params() {
        let ctx = generate_corpus(&ContextSpace::with_penetration(1.0), 1, 6).unwrap().remove(0);
        let cfg = EvalConfig { seeds: vec![3], ..Default::default() };
        let none = Policies::<f64>::default();
        let a = run_baseline(ControllerKind::Nominal, &ctx, &cfg, &none).unwrap();
        let b = run_baseline(ControllerKind::Nominal, &ctx, &cfg, &none).unwrap();
        assert_eq!(a, b);
        assert!(matches!(run_baseline(ControllerKind::Mrtl, &ctx, &cfg, &none), Err(Error::MissingParams("mrtl"))));
        let wrong = PolicyParams::<f64>::new(&[4], 3.0, 0.0, PolicyMode::Multitask, 0);
        let p = Policies { mrtl: Some(&wrong), multitask: None };
        assert!(run_baseline(ControllerKind::Mrtl, &ctx, &cfg, &p).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ControllerKind::ALL {
            assert_eq!(k.as_str().parse::<ControllerKind>().unwrap(), k);
        }
        assert!("pid".parse::<ControllerKind>().is_err());
    }
}
