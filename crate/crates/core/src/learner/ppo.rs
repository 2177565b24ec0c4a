//! Clipped-surrogate policy optimization with a separate value network.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, Adam};
use super::policy::{gaussian_entropy, gaussian_log_prob, PolicyParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flattened training samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<S> {
    pub obs: Array2<S>,
    pub actions: Array1<S>,
    pub log_probs: Array1<S>,
    pub advantages: Array1<S>,
    pub targets: Array1<S>,
    /// Critic estimates at collection time.
    pub values: Array1<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            log_probs: self.log_probs.select(Axis(0), idx),
            advantages: self.advantages.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
            values: self.values.select(Axis(0), idx),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub minibatch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, entropy_coef: 0.003, vf_coef: 0.5, max_grad_norm: 0.5, epochs: 4, minibatch: 256 }
    }
}

/// Actor objective on one minibatch and its gradient (actor weights, then
/// `log_std`, the layout of [`PolicyParams::actor_flat`]).
#[derive(Clone, Debug)]
pub struct ActorLoss<S> {
    pub loss: S,
    pub entropy: S,
    pub approx_kl: S,
    pub clip_fraction: S,
    pub grad: Vec<S>,
}

pub fn actor_loss<S: Scalar>(params: &PolicyParams<S>, mb: &Batch<S>, clip_eps: f64, entropy_coef: f64) -> ActorLoss<S> {
    let n = S::lit(mb.len() as f64);
    let eps = S::lit(clip_eps);
    let (lo, hi) = (S::one() - eps, S::one() + eps);
    let pass = params.forward_actor_cached(mb.obs.view());
    let log_std = params.log_std;
    let var = (log_std + log_std).exp();

    let mut surrogate = S::zero();
    let mut kl = S::zero();
    let mut clipped = 0usize;
    let mut grad_head = Array2::zeros((mb.len(), 1));
    let mut grad_log_std = S::zero();
    for i in 0..mb.len() {
        let (a, mu, adv) = (mb.actions[i], pass.mean[i], mb.advantages[i]);
        let logp = gaussian_log_prob(a, mu, log_std);
        let ratio = (logp - mb.log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped_term = ratio.max(lo).min(hi) * adv;
        surrogate = surrogate + unclipped.min(clipped_term);
        kl = kl + (ratio - S::one()) - ratio.ln();
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        if unclipped <= clipped_term {
            // d(-ratio*adv/n)/dlogp
            let g = -unclipped / n;
            let dmu = (a - mu) / var;
            let dhead = params.action_bound * (S::one() - pass.squash[i] * pass.squash[i]);
            grad_head[[i, 0]] = g * dmu * dhead;
            let z2 = (a - mu) * (a - mu) / var;
            grad_log_std = grad_log_std + g * (z2 - S::one());
        }
    }
    let entropy = gaussian_entropy(log_std);
    grad_log_std = grad_log_std - S::lit(entropy_coef);
    let mut grad = Vec::with_capacity(params.actor.param_count() + 1);
    params.actor.backward(&pass.cache, grad_head.view()).write_flat(&mut grad);
    grad.push(grad_log_std);
    ActorLoss {
        loss: -surrogate / n - S::lit(entropy_coef) * entropy,
        entropy,
        approx_kl: kl / n,
        clip_fraction: S::lit(clipped as f64) / n,
        grad,
    }
}

/// `vf_coef * mean((V - target)^2)`, its unscaled mean squared error, and the
/// gradient with respect to the critic weights.
pub fn critic_loss<S: Scalar>(params: &PolicyParams<S>, mb: &Batch<S>, vf_coef: f64) -> (S, S, Vec<S>) {
    let n = S::lit(mb.len() as f64);
    let (out, cache) = params.critic.forward_cached(mb.obs.view());
    let err = &out.column(0) - &mb.targets;
    let mse = err.iter().map(|&e| e * e).sum::<S>() / n;
    let k = S::lit(2.0 * vf_coef) / n;
    let grad_out = err.mapv(|e| e * k).insert_axis(Axis(1));
    let mut grad = Vec::with_capacity(params.critic.param_count());
    params.critic.backward(&cache, grad_out.view()).write_flat(&mut grad);
    (S::lit(vf_coef) * mse, mse, grad)
}

/// Adam state for the two networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new<S: Scalar>(params: &PolicyParams<S>, lr: f64) -> Self {
        Self {
            actor: Adam::new(params.actor.param_count() + 1, lr),
            critic: Adam::new(params.critic.param_count(), lr),
        }
    }
}

/// Means over all minibatch updates of one call to [`ppo_update`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Of the collection-time value estimates against the targets.
    pub explained_variance: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// `1 - Var(y - y_hat) / Var(y)`; 0 when the targets are constant.
pub fn explained_variance<S: Scalar>(pred: &Array1<S>, target: &Array1<S>) -> f64 {
    let n = target.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
    };
    let vt = var(&mut target.iter().map(|t| t.as_f64()));
    if vt == 0.0 {
        return 0.0;
    }
    let vr = var(&mut target.iter().zip(pred).map(|(t, p)| t.as_f64() - p.as_f64()));
    1.0 - vr / vt
}

/// Several epochs of shuffled minibatch updates. With `update_actor` false
/// only the critic moves.
pub fn ppo_update<S: Scalar, R: Rng + ?Sized>(
    params: &mut PolicyParams<S>,
    opt: &mut Optimizers,
    batch: &Batch<S>,
    cfg: &PpoConfig,
    update_actor: bool,
    rng: &mut R,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let mut stats = UpdateStats {
        explained_variance: explained_variance(&batch.values, &batch.targets),
        ..Default::default()
    };
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let size = cfg.minibatch.max(1);
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(size) {
            let mb = batch.select(chunk);
            if update_actor {
                let mut a = actor_loss(params, &mb, cfg.clip_eps, cfg.entropy_coef);
                if !a.loss.is_finite() || a.grad.iter().any(|g| !g.is_finite()) {
                    return Err(non_finite("actor", &mb));
                }
                stats.actor_grad_norm += clip_grad_norm(&mut a.grad, cfg.max_grad_norm);
                let mut flat = params.actor_flat();
                opt.actor.step(&mut flat, &a.grad);
                params.set_actor_flat(&flat);
                stats.policy_loss += a.loss.as_f64();
                stats.entropy += a.entropy.as_f64();
                stats.approx_kl += a.approx_kl.as_f64();
                stats.clip_fraction += a.clip_fraction.as_f64();
            }
            let (loss, mse, mut grad) = critic_loss(params, &mb, cfg.vf_coef);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(non_finite("critic", &mb));
            }
            stats.critic_grad_norm += clip_grad_norm(&mut grad, cfg.max_grad_norm);
            let mut flat = params.critic_flat();
            opt.critic.step(&mut flat, &grad);
            params.set_critic_flat(&flat);
            stats.value_loss += mse.as_f64();
            count += 1.0;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("policy parameters after update".into()));
    }
    for x in [
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.approx_kl,
        &mut stats.clip_fraction,
        &mut stats.actor_grad_norm,
        &mut stats.critic_grad_norm,
    ] {
        *x /= count;
    }
    Ok(stats)
}

fn non_finite<S: Scalar>(which: &str, mb: &Batch<S>) -> Error {
    let range = |a: &Array1<S>| {
        a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x.as_f64()), hi.max(x.as_f64())))
    };
    Error::NonFinite(format!(
        "{which} loss; minibatch of {}: actions {:?}, log-probs {:?}, advantages {:?}, targets {:?}",
        mb.len(),
        range(&mb.actions),
        range(&mb.log_probs),
        range(&mb.advantages),
        range(&mb.targets)
    ))
}
