//! Residual actor-critic learning over a corpus of intersection contexts.
//!
//! The actor's output head starts at exactly zero, so a fresh residual policy
//! reproduces the nominal controller; PPO then shapes the residual using
//! experience from many contexts at once.

mod checkpoint;
mod gae;
mod nn;
mod optim;
mod policy;
mod ppo;
mod rollout;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_params, Checkpoint, CHECKPOINT_FORMAT};
pub use gae::{compute_gae, normalize};
pub use nn::{Cache, Dense, Mlp};
pub use optim::{clip_grad_norm, Adam};
pub use policy::{gaussian_entropy, gaussian_log_prob, stack, ActorPass, PolicyMode, PolicyParams};
pub use ppo::{actor_loss, critic_loss, explained_variance, ppo_update, Batch, Optimizers, PpoConfig, UpdateStats};
pub use rollout::{base_action, collect_rollouts, context_schedule, observe, run_worker, Rollout, Trajectory};

use crate::control::{compose_action, NominalParams, RewardConfig, OBS_DIM};
use crate::error::{Error, Result};
use crate::microsim::{ActionMap, Controller, SimConfig, Simulator};
use crate::scalar::Scalar;
use crate::scenario::{corpus_hash, mix_seed, Context};

/// Optimization and rollout settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Parallel simulator instances per iteration.
    pub workers: usize,
    pub critic_pretrain_iters: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub steps_per_worker: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub mode: PolicyMode,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub nominal: NominalParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            iterations: 400,
            workers: 12,
            critic_pretrain_iters: 30,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            steps_per_worker: 1200,
            epochs: 4,
            minibatch: 256,
            entropy_coef: 0.003,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: vec![128, 128, 128],
            log_std_init: 0.3f64.ln(),
            mode: PolicyMode::Mrtl,
            checkpoint_every: 10,
            seed: 0,
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            nominal: NominalParams::default(),
        }
    }
}

impl TrainConfig {
    /// Workstation-sized run: 50 iterations.
    pub fn desk() -> Self {
        Self { iterations: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda + 1.0),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip_eps must lie in (0, 1)".into()));
        }
        if self.gamma > 1.0 || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gamma and gae_lambda must not exceed 1".into()));
        }
        if self.workers == 0 || self.steps_per_worker == 0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("workers, steps_per_worker, epochs and minibatch must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.entropy_coef >= 0.0 && self.vf_coef > 0.0 && self.log_std_init.is_finite()) {
            return Err(Error::Config("invalid entropy, value or log-std setting".into()));
        }
        self.sim.validate()
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip_eps: self.clip_eps,
            entropy_coef: self.entropy_coef,
            vf_coef: self.vf_coef,
            max_grad_norm: self.max_grad_norm,
            epochs: self.epochs,
            minibatch: self.minibatch,
        }
    }

    pub fn init_params<S: Scalar>(&self) -> PolicyParams<S> {
        PolicyParams::new(&self.hidden, self.sim.max_accel, self.log_std_init, self.mode, mix_seed(self.seed, SEED_INIT))
    }
}

const SEED_INIT: u64 = 1;
const SEED_SHUFFLE: u64 = 2;
const SEED_PRETRAIN: u64 = 3;
const SEED_TRAIN: u64 = 4;
const SEED_UPDATE: u64 = 5;

/// Flattens trajectories into a batch with normalized advantages.
pub fn build_batch<S: Scalar>(trajectories: &[Trajectory<S>], gamma: f64, lambda: f64) -> Batch<S> {
    let n: usize = trajectories.iter().map(|t| t.len()).sum();
    let mut obs = Array2::zeros((n, OBS_DIM));
    let mut actions = Vec::with_capacity(n);
    let mut log_probs = Vec::with_capacity(n);
    let mut advantages = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut row = 0;
    for t in trajectories {
        let (adv, tgt) = compute_gae(&t.rewards, &t.values, t.bootstrap, t.terminal, S::lit(gamma), S::lit(lambda));
        for k in 0..t.len() {
            for j in 0..OBS_DIM {
                obs[[row, j]] = t.obs[k][j];
            }
            row += 1;
        }
        actions.extend_from_slice(&t.actions);
        log_probs.extend_from_slice(&t.log_probs);
        advantages.extend(adv);
        targets.extend(tgt);
        values.extend_from_slice(&t.values);
    }
    normalize(&mut advantages);
    Batch {
        obs,
        actions: Array1::from(actions),
        log_probs: Array1::from(log_probs),
        advantages: Array1::from(advantages),
        targets: Array1::from(targets),
        values: Array1::from(values),
    }
}

/// Mean undiscounted per-vehicle return of one context in one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextReturn {
    pub context: usize,
    pub mean_return: f64,
    pub agents: usize,
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// `pretrain` or `train`.
    pub phase: String,
    pub iteration: usize,
    pub samples: usize,
    pub mean_return: f64,
    pub context_returns: Vec<ContextReturn>,
    /// Mean squared error of the critic on this iteration's fresh rollouts,
    /// measured before the update.
    pub heldout_value_mse: f64,
    #[serde(flatten)]
    pub stats: UpdateStats,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_s: Option<f64>,
}

fn summarize<S: Scalar>(phase: &str, iteration: usize, trajectories: &[Trajectory<S>], batch: &Batch<S>) -> LogRow {
    let mut per: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for t in trajectories {
        let e = per.entry(t.context_id).or_default();
        e.0 += t.undiscounted_return();
        e.1 += 1;
    }
    let context_returns: Vec<ContextReturn> = per
        .into_iter()
        .map(|(context, (sum, agents))| ContextReturn { context, mean_return: sum / agents as f64, agents })
        .collect();
    let mean_return = if trajectories.is_empty() {
        0.0
    } else {
        trajectories.iter().map(|t| t.undiscounted_return()).sum::<f64>() / trajectories.len() as f64
    };
    let heldout_value_mse = if batch.is_empty() {
        0.0
    } else {
        batch.values.iter().zip(&batch.targets).map(|(v, t)| (v.as_f64() - t.as_f64()).powi(2)).sum::<f64>()
            / batch.len() as f64
    };
    LogRow {
        phase: phase.into(),
        iteration,
        samples: batch.len(),
        mean_return,
        context_returns,
        heldout_value_mse,
        stats: UpdateStats::default(),
        wall_s: None,
    }
}

/// Where training writes its side outputs.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Checkpoint file, rewritten atomically every `checkpoint_every`
    /// iterations and at the end.
    pub checkpoint: Option<PathBuf>,
    /// Receives one JSON line per iteration.
    pub log: Option<&'a mut dyn Write>,
    /// Adds elapsed seconds to each log row (breaks byte-for-byte
    /// reproducibility of the log).
    pub wall_time: bool,
}

pub struct TrainOutcome<S> {
    pub params: PolicyParams<S>,
    pub log: Vec<LogRow>,
}

struct Session<'a, 'b> {
    corpus: &'a [Context],
    cfg: &'a TrainConfig,
    order: Vec<usize>,
    opts: TrainOptions<'b>,
    start: Instant,
    rows: Vec<LogRow>,
    rng: ChaCha8Rng,
}

impl<'a, 'b> Session<'a, 'b> {
    fn new(corpus: &'a [Context], cfg: &'a TrainConfig, opts: TrainOptions<'b>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        cfg.validate()?;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SEED_SHUFFLE)));
        Ok(Self {
            corpus,
            cfg,
            order,
            opts,
            start: Instant::now(),
            rows: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SEED_UPDATE)),
        })
    }

    fn iterate<S: Scalar>(
        &mut self,
        params: &mut PolicyParams<S>,
        opt: &mut Optimizers,
        phase: &str,
        iteration: usize,
    ) -> Result<()> {
        let pretrain = phase == "pretrain";
        let stream = if pretrain { SEED_PRETRAIN } else { SEED_TRAIN };
        let round = mix_seed(mix_seed(self.cfg.seed, stream), iteration as u64);
        let rollout = collect_rollouts(params, self.corpus, &self.order, self.cfg, iteration, round, !pretrain)?;
        let batch = build_batch(&rollout.trajectories, self.cfg.gamma, self.cfg.gae_lambda);
        let mut row = summarize(phase, iteration, &rollout.trajectories, &batch);
        if !batch.is_empty() {
            row.stats = ppo_update(params, opt, &batch, &self.cfg.ppo(), !pretrain, &mut self.rng)?;
        }
        if self.opts.wall_time {
            row.wall_s = Some(self.start.elapsed().as_secs_f64());
        }
        if let Some(log) = self.opts.log.as_mut() {
            serde_json::to_writer(&mut *log, &row)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    fn checkpoint<S: Scalar>(&self, params: &PolicyParams<S>, iteration: usize) -> Result<()> {
        if let Some(path) = &self.opts.checkpoint {
            Checkpoint::from_params(params, iteration, self.cfg, &corpus_hash(self.corpus)).save(path)?;
        }
        Ok(())
    }
}

/// Fits the critic to rollouts of the unmodified base policy. The actor is
/// never updated. Returns the per-iteration log rows.
pub fn pretrain_critic<S: Scalar>(
    params: &mut PolicyParams<S>,
    opt: &mut Optimizers,
    corpus: &[Context],
    cfg: &TrainConfig,
) -> Result<Vec<LogRow>> {
    let mut session = Session::new(corpus, cfg, TrainOptions::default())?;
    for i in 0..cfg.critic_pretrain_iters {
        session.iterate(params, opt, "pretrain", i)?;
    }
    Ok(session.rows)
}

/// Critic pretraining (residual mode only) followed by `cfg.iterations`
/// rounds of rollout collection and PPO updates.
pub fn train<S: Scalar>(corpus: &[Context], cfg: &TrainConfig, opts: TrainOptions<'_>) -> Result<TrainOutcome<S>> {
    let mut session = Session::new(corpus, cfg, opts)?;
    let mut params: PolicyParams<S> = cfg.init_params();
    let mut opt = Optimizers::new(&params, cfg.lr);
    if cfg.mode == PolicyMode::Mrtl {
        for i in 0..cfg.critic_pretrain_iters {
            session.iterate(&mut params, &mut opt, "pretrain", i)?;
        }
    }
    session.checkpoint(&params, 0)?;
    for i in 0..cfg.iterations {
        session.iterate(&mut params, &mut opt, "train", i)?;
        let done = i + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            session.checkpoint(&params, done)?;
        }
    }
    session.checkpoint(&params, cfg.iterations)?;
    Ok(TrainOutcome { params, log: session.rows })
}

/// Deterministic execution of a trained policy: every AV applies the base
/// command plus the actor mean.
#[derive(Clone, Debug)]
pub struct PolicyController<S> {
    pub params: PolicyParams<S>,
    pub nominal: NominalParams,
}

impl<S: Scalar> PolicyController<S> {
    pub fn new(params: PolicyParams<S>, nominal: NominalParams) -> Self {
        Self { params, nominal }
    }
}

impl<S: Scalar> Controller<S> for PolicyController<S> {
    fn act(&mut self, sim: &Simulator<S>) -> Result<ActionMap<S>> {
        let ids = sim.active_avs();
        let mut out = ActionMap::new();
        if ids.is_empty() {
            return Ok(out);
        }
        let means = self.params.forward_actor(observe(sim, &ids, &self.params.scales)?.view());
        for (k, id) in ids.into_iter().enumerate() {
            if !means[k].is_finite() {
                return Err(Error::NonFinite(format!("policy output for vehicle {id}")));
            }
            let base = base_action(self.params.mode, sim, id, &self.nominal)?;
            out.insert(id, compose_action(base, means[k], self.params.action_bound)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::NominalController;
    use crate::microsim::run_episode;
    use crate::scenario::{generate_corpus, ContextSpace};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            workers: 2,
            steps_per_worker: 200,
            hidden: vec![8, 8],
            critic_pretrain_iters: 2,
            iterations: 2,
            minibatch: 64,
            epochs: 2,
            seed: 17,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn fresh_policy_controller_matches_nominal() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(1.0), 2, 8).unwrap();
        let cfg = tiny_cfg();
        let params: PolicyParams<f64> = cfg.init_params();
        for ctx in &corpus {
            let mut mrtl = PolicyController::new(params.clone(), cfg.nominal);
            let mut nominal = NominalController { params: cfg.nominal };
            let a = run_episode::<f64, _>(ctx, &cfg.sim, 3, &mut mrtl, true).unwrap();
            let b = run_episode::<f64, _>(ctx, &cfg.sim, 3, &mut nominal, true).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn pretraining_leaves_actor_untouched() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(1.0), 2, 8).unwrap();
        let cfg = tiny_cfg();
        let mut params: PolicyParams<f64> = cfg.init_params();
        let actor = params.actor_flat();
        let critic = params.critic_flat();
        let mut opt = Optimizers::new(&params, cfg.lr);
        let rows = pretrain_critic(&mut params, &mut opt, &corpus, &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(actor, params.actor_flat());
        assert_ne!(critic, params.critic_flat());

        let none = TrainConfig { critic_pretrain_iters: 0, ..cfg.clone() };
        let mut p2: PolicyParams<f64> = none.init_params();
        let before = p2.clone();
        assert!(pretrain_critic(&mut p2, &mut opt, &corpus, &none).unwrap().is_empty());
        assert_eq!(before, p2);
    }

    #[test]
    fn zero_iterations_returns_a_nominal_policy() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(1.0), 2, 8).unwrap();
        let cfg = TrainConfig { iterations: 0, ..tiny_cfg() };
        let out = train::<f64>(&corpus, &cfg, TrainOptions::default()).unwrap();
        let x = stack(&[[0.5; OBS_DIM]; 3]);
        assert!(out.params.forward_actor(x.view()).iter().all(|&m| m == 0.0));
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn training_is_reproducible_and_checkpoints() {
        let corpus = generate_corpus(&ContextSpace::with_penetration(1.0), 2, 8).unwrap();
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("policy.json");
        let mut log_a = Vec::new();
        let a = train::<f64>(
            &corpus,
            &cfg,
            TrainOptions { checkpoint: Some(ck.clone()), log: Some(&mut log_a), wall_time: false },
        )
        .unwrap();
        let mut log_b = Vec::new();
        let b = train::<f64>(&corpus, &cfg, TrainOptions { log: Some(&mut log_b), ..Default::default() }).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(log_a, log_b);
        assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), 4);
        let loaded: PolicyParams<f64> = load_params(&ck).unwrap();
        assert_eq!(loaded, a.params);
        assert_eq!(Checkpoint::load(&ck).unwrap().iteration, 2);
        assert_ne!(a.params.actor_flat(), cfg.init_params::<f64>().actor_flat());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TrainConfig { clip_eps: 1.5, ..TrainConfig::desk() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { workers: 0, ..TrainConfig::desk() };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let empty: Vec<Context> = vec![];
        assert!(matches!(train::<f64>(&empty, &TrainConfig::desk(), TrainOptions::default()), Err(Error::EmptyCorpus)));
    }
}
