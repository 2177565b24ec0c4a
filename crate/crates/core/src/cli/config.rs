//! Flat TOML run configuration layered over the library defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{NominalParams, ObservationScales, RewardConfig};
use crate::evalbench::EvalConfig;
use crate::learner::{PolicyMode, TrainConfig};
use crate::microsim::SimConfig;

/// Every key is optional; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub verbosity: Option<u8>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,

    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub max_accel: Option<f64>,
    pub max_decel: Option<f64>,
    pub drain: Option<bool>,
    pub max_drain: Option<f64>,

    pub idm_time_headway: Option<f64>,
    pub idm_accel: Option<f64>,
    pub idm_decel: Option<f64>,
    pub idm_delta: Option<f64>,
    pub idm_s0: Option<f64>,
    pub vehicle_length: Option<f64>,

    pub emission_beta0: Option<f64>,
    pub emission_beta1: Option<f64>,
    pub emission_mass: Option<f64>,
    pub emission_roll_coeff: Option<f64>,
    pub emission_drag_coeff: Option<f64>,

    pub nominal_k_p: Option<f64>,
    pub nominal_glide_margin: Option<f64>,

    pub reward_w1: Option<f64>,
    pub reward_emission_scale: Option<f64>,

    pub lr: Option<f64>,
    pub iterations: Option<usize>,
    /// Rollout workers per iteration (changes results, unlike `--workers`).
    pub rollout_workers: Option<usize>,
    pub critic_pretrain_iters: Option<usize>,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip_eps: Option<f64>,
    pub steps_per_worker: Option<usize>,
    pub epochs: Option<usize>,
    pub minibatch: Option<usize>,
    pub entropy_coef: Option<f64>,
    pub vf_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub log_std_init: Option<f64>,
    pub mode: Option<PolicyMode>,
    pub checkpoint_every: Option<usize>,

    pub eval_seeds: Option<Vec<u64>>,
}

macro_rules! set {
    ($src:expr => $($dst:expr, $field:ident);* $(;)?) => {
        $( if let Some(v) = $src.$field.clone() { $dst = v; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn apply_sim(&self, s: &mut SimConfig) {
        set!(self =>
            s.dt, dt; s.horizon, horizon; s.max_accel, max_accel; s.max_decel, max_decel;
            s.drain, drain; s.max_drain, max_drain;
            s.idm.time_headway, idm_time_headway; s.idm.accel, idm_accel; s.idm.decel, idm_decel;
            s.idm.delta, idm_delta; s.idm.s0, idm_s0; s.idm.vehicle_length, vehicle_length;
            s.emission.beta0, emission_beta0; s.emission.beta1, emission_beta1; s.emission.mass, emission_mass;
            s.emission.roll_coeff, emission_roll_coeff; s.emission.drag_coeff, emission_drag_coeff;
        );
    }

    pub fn apply_nominal(&self, n: &mut NominalParams) {
        set!(self => n.k_p, nominal_k_p; n.glide_margin, nominal_glide_margin);
    }

    pub fn apply_reward(&self, r: &mut RewardConfig) {
        set!(self => r.w1, reward_w1; r.emission_scale, reward_emission_scale);
    }

    pub fn apply_train(&self, t: &mut TrainConfig) {
        set!(self =>
            t.lr, lr; t.iterations, iterations; t.workers, rollout_workers;
            t.critic_pretrain_iters, critic_pretrain_iters; t.gamma, gamma; t.gae_lambda, gae_lambda;
            t.clip_eps, clip_eps; t.steps_per_worker, steps_per_worker; t.epochs, epochs;
            t.minibatch, minibatch; t.entropy_coef, entropy_coef; t.vf_coef, vf_coef;
            t.max_grad_norm, max_grad_norm; t.hidden, hidden; t.log_std_init, log_std_init;
            t.mode, mode; t.checkpoint_every, checkpoint_every;
        );
        self.apply_sim(&mut t.sim);
        self.apply_reward(&mut t.reward);
        self.apply_nominal(&mut t.nominal);
    }

    pub fn eval_config(&self) -> EvalConfig {
        let mut e = EvalConfig::default();
        self.apply_sim(&mut e.sim);
        self.apply_nominal(&mut e.nominal);
        set!(self => e.seeds, eval_seeds);
        e
    }
}

/// Everything evaluation results depend on, for output headers.
#[derive(Serialize)]
pub struct EvalEcho<'a> {
    pub tool_version: &'static str,
    pub corpus_hash: &'a str,
    pub sim: &'a SimConfig,
    pub nominal: &'a NominalParams,
    pub seeds: &'a [u64],
    pub observation_scales: ObservationScales,
    pub checkpoints: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<serde_json::Value>,
}
