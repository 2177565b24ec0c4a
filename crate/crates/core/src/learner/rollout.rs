//! Parallel experience collection with one shared policy per worker batch.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::policy::{gaussian_log_prob, PolicyMode, PolicyParams};
use super::TrainConfig;
use crate::control::{build_observation, compose_action, nominal_accel, NominalParams, ObservationScales, OBS_DIM};
use crate::error::{Error, Result};
use crate::microsim::{ActionMap, Simulator, VehicleId};
use crate::scalar::Scalar;
use crate::scenario::{mix_seed, Context};

/// Consecutive steps of one AV within one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub context_id: usize,
    pub agent: VehicleId,
    pub obs: Vec<[S; OBS_DIM]>,
    /// Sampled residual (or full action in multitask mode) before composition.
    pub actions: Vec<S>,
    pub log_probs: Vec<S>,
    pub rewards: Vec<S>,
    pub values: Vec<S>,
    /// The vehicle left the network after the last step.
    pub terminal: bool,
    /// Value of the state after the last step when not terminal.
    pub bootstrap: S,
}

impl<S: Scalar> Trajectory<S> {
    fn new(context_id: usize, agent: VehicleId) -> Self {
        Self {
            context_id,
            agent,
            obs: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            terminal: false,
            bootstrap: S::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Episode-termination flag of step `t`.
    pub fn done(&self, t: usize) -> bool {
        self.terminal && t + 1 == self.len()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().map(|r| r.as_f64()).sum()
    }
}

/// Normalized observations of `ids`, one row each.
pub fn observe<S: Scalar>(sim: &Simulator<S>, ids: &[VehicleId], scales: &ObservationScales) -> Result<Array2<S>> {
    let mut x = Array2::zeros((ids.len(), OBS_DIM));
    for (row, &id) in x.rows_mut().into_iter().zip(ids) {
        let f = build_observation(sim, id)?.features(scales);
        for (dst, src) in row.into_iter().zip(f) {
            *dst = src;
        }
    }
    Ok(x)
}

/// Base command the actor output is added to.
pub fn base_action<S: Scalar>(mode: PolicyMode, sim: &Simulator<S>, id: VehicleId, nominal: &NominalParams) -> Result<S> {
    match mode {
        PolicyMode::Mrtl => nominal_accel(sim, id, nominal),
        PolicyMode::Multitask => Ok(S::zero()),
    }
}

/// Worker-to-context assignment: worker `w` of iteration `i` runs
/// `order[(i * workers + w) % n]`.
pub fn context_schedule(order: &[usize], iteration: usize, workers: usize) -> Vec<usize> {
    (0..workers).map(|w| order[(iteration * workers + w) % order.len()]).collect()
}

/// Output of one collection round.
#[derive(Clone, Debug)]
pub struct Rollout<S> {
    pub trajectories: Vec<Trajectory<S>>,
    /// Context index run by each worker.
    pub contexts: Vec<usize>,
}

/// Runs `cfg.workers` simulator instances in parallel under a snapshot of
/// `params`. With `apply_residual` false the sampled residual is recorded but
/// the vehicles execute the base command only.
pub fn collect_rollouts<S: Scalar>(
    params: &PolicyParams<S>,
    corpus: &[Context],
    order: &[usize],
    cfg: &TrainConfig,
    iteration: usize,
    round_seed: u64,
    apply_residual: bool,
) -> Result<Rollout<S>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let contexts = context_schedule(order, iteration, cfg.workers);
    let parts: Vec<Result<Vec<Trajectory<S>>>> = contexts
        .par_iter()
        .enumerate()
        .map(|(w, &c)| run_worker(params, &corpus[c], c, cfg, mix_seed(round_seed, w as u64), apply_residual))
        .collect();
    let mut trajectories = Vec::new();
    for p in parts {
        trajectories.extend(p?);
    }
    Ok(Rollout { trajectories, contexts })
}

/// One worker: `cfg.steps_per_worker` simulator steps, restarting the
/// episode whenever the horizon is reached.
pub fn run_worker<S: Scalar>(
    params: &PolicyParams<S>,
    ctx: &Context,
    context_id: usize,
    cfg: &TrainConfig,
    seed: u64,
    apply_residual: bool,
) -> Result<Vec<Trajectory<S>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let horizon = cfg.sim.steps().max(1);
    let std = params.log_std.exp();
    let (speed_limit, beta0) = (ctx.speed_limit, cfg.sim.emission.beta0);
    let mut finished = Vec::new();
    let mut remaining = cfg.steps_per_worker;
    let mut episode = 0u64;
    while remaining > 0 {
        episode += 1;
        let mut sim = Simulator::<S>::new(ctx, &cfg.sim, mix_seed(seed, episode))?;
        let mut open: BTreeMap<VehicleId, Trajectory<S>> = BTreeMap::new();
        let len = remaining.min(horizon);
        for _ in 0..len {
            let ids = sim.active_avs();
            let mut actions = ActionMap::new();
            if !ids.is_empty() {
                let x = observe(&sim, &ids, &params.scales)?;
                let means = params.forward_actor(x.view());
                let values = params.value(x.view());
                for (k, &id) in ids.iter().enumerate() {
                    let noise = S::lit(rng.sample::<f64, _>(StandardNormal));
                    let a = means[k] + std * noise;
                    let base = base_action(params.mode, &sim, id, &cfg.nominal)?;
                    let cmd = if apply_residual { compose_action(base, a, params.action_bound)? } else { base };
                    actions.insert(id, cmd);
                    let t = open.entry(id).or_insert_with(|| Trajectory::new(context_id, id));
                    t.obs.push(std::array::from_fn(|j| x[[k, j]]));
                    t.actions.push(a);
                    t.log_probs.push(gaussian_log_prob(a, means[k], params.log_std));
                    t.values.push(values[k]);
                }
            }
            sim.step(&actions)?;
            for &id in &ids {
                let v = sim.vehicle_or_departed(id).ok_or(Error::UnknownVehicle(id))?;
                let r = cfg.reward.reward(v.speed, v.emission_rate, speed_limit, beta0);
                if !r.is_finite() {
                    return Err(Error::NonFinite(format!("reward of vehicle {id}")));
                }
                open.get_mut(&id).expect("trajectory opened this step").rewards.push(r);
            }
            for v in sim.departed() {
                if let Some(mut t) = open.remove(&v.id) {
                    t.terminal = true;
                    finished.push(t);
                }
            }
        }
        remaining -= len;
        // Truncated trajectories bootstrap from the critic.
        let ids: Vec<VehicleId> = open.keys().copied().collect();
        if !ids.is_empty() {
            let boot = params.value(observe(&sim, &ids, &params.scales)?.view());
            for (k, id) in ids.iter().enumerate() {
                let mut t = open.remove(id).expect("listed above");
                t.bootstrap = boot[k];
                finished.push(t);
            }
        }
    }
    Ok(finished)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_corpus, ContextSpace};

    fn cfg() -> TrainConfig {
        TrainConfig { workers: 3, steps_per_worker: 300, hidden: vec![8, 8], ..TrainConfig::desk() }
    }

    #[test]
    fn round_robin_covers_every_context() {
        let order = [3, 0, 7, 1, 5, 2, 6, 4];
        for it in 0..5 {
            let mut seen = context_schedule(&order, it, 12);
            seen.sort();
            seen.dedup();
            assert_eq!(seen, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn no_avs_no_trajectories() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(0.0), 2, 3).unwrap();
        let c = cfg();
        let p = PolicyParams::<f64>::new(&c.hidden, 3.0, 0.3f64.ln(), PolicyMode::Mrtl, 1);
        let r = collect_rollouts(&p, &corpus, &[0, 1], &c, 0, 5, true).unwrap();
        assert!(r.trajectories.is_empty());
    }

    #[test]
    fn reproducible_and_well_formed() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(1.0), 1, 3).unwrap();
        let c = TrainConfig { workers: 1, ..cfg() };
        let p = PolicyParams::<f64>::new(&c.hidden, 3.0, 0.3f64.ln(), PolicyMode::Mrtl, 1);
        let a = collect_rollouts(&p, &corpus, &[0], &c, 0, 5, true).unwrap();
        let b = collect_rollouts(&p, &corpus, &[0], &c, 0, 5, true).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert!(!a.trajectories.is_empty());
        let steps: usize = a.trajectories.iter().map(|t| t.len()).sum();
        assert!(steps > 0);
        for t in &a.trajectories {
            assert_eq!(t.obs.len(), t.len());
            assert_eq!(t.values.len(), t.len());
            assert!(t.rewards.iter().all(|r| r.is_finite()));
            assert!((0..t.len().saturating_sub(1)).all(|k| !t.done(k)));
        }
    }
}
