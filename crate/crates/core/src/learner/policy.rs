//! Gaussian actor with a squashed, zero-initialized residual head and a
//! separate value network.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{Cache, Mlp};
use crate::control::{ObservationScales, OBS_DIM};
use crate::scalar::Scalar;

/// How the actor output is turned into an acceleration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Residual on top of the nominal policy.
    Mrtl,
    /// The actor output is the whole action; no nominal policy.
    Multitask,
}

impl PolicyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mrtl => "mrtl",
            Self::Multitask => "multitask",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<S> {
    pub actor: Mlp<S>,
    /// State-independent log standard deviation of the residual.
    pub log_std: S,
    pub critic: Mlp<S>,
    /// `A`: the residual mean is `A * tanh(head)`.
    pub action_bound: S,
    pub mode: PolicyMode,
    pub scales: ObservationScales,
}

/// Forward pass intermediates needed for the actor gradient.
pub struct ActorPass<S> {
    pub mean: Array1<S>,
    /// `tanh(head)` per sample.
    pub squash: Array1<S>,
    pub cache: Cache<S>,
}

impl<S: Scalar> PolicyParams<S> {
    /// Fresh parameters: hidden weights random, actor head exactly zero.
    pub fn new(hidden: &[usize], action_bound: f64, log_std: f64, mode: PolicyMode, seed: u64) -> Self {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::new(&sizes, true, &mut rng);
        let critic = Mlp::new(&sizes, false, &mut rng);
        Self {
            actor,
            log_std: S::lit(log_std),
            critic,
            action_bound: S::lit(action_bound),
            mode,
            scales: ObservationScales::default(),
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.actor.layers[1..].iter().map(|l| l.w.nrows()).collect()
    }

    /// Residual means for a batch of normalized observations.
    pub fn forward_actor(&self, obs: ArrayView2<S>) -> Array1<S> {
        let a = self.action_bound;
        self.actor.forward(obs).column(0).mapv(|h| a * h.tanh())
    }

    pub fn forward_actor_cached(&self, obs: ArrayView2<S>) -> ActorPass<S> {
        let (out, cache) = self.actor.forward_cached(obs);
        let squash = out.column(0).mapv(|h| h.tanh());
        let mean = squash.mapv(|t| self.action_bound * t);
        ActorPass { mean, squash, cache }
    }

    /// Mean and log-std for a single observation.
    pub fn act_one(&self, obs: &[S; OBS_DIM]) -> (S, S) {
        let x = ArrayView2::from_shape((1, OBS_DIM), obs).expect("observation shape");
        (self.forward_actor(x)[0], self.log_std)
    }

    pub fn value(&self, obs: ArrayView2<S>) -> Array1<S> {
        self.critic.forward(obs).column(0).to_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.is_finite()
    }

    /// Actor weights followed by `log_std`.
    pub fn actor_flat(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.actor.param_count() + 1);
        self.actor.write_flat(&mut v);
        v.push(self.log_std);
        v
    }

    pub fn set_actor_flat(&mut self, flat: &[S]) {
        let k = self.actor.read_flat(flat);
        self.log_std = flat[k];
    }

    pub fn critic_flat(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.critic.param_count());
        self.critic.write_flat(&mut v);
        v
    }

    pub fn set_critic_flat(&mut self, flat: &[S]) {
        self.critic.read_flat(flat);
    }
}

/// Log density of `a` under `N(mean, exp(log_std)^2)`.
pub fn gaussian_log_prob<S: Scalar>(a: S, mean: S, log_std: S) -> S {
    let z = (a - mean) / log_std.exp();
    S::lit(-0.5) * z * z - log_std - S::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Differential entropy of a univariate gaussian.
pub fn gaussian_entropy<S: Scalar>(log_std: S) -> S {
    S::lit(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()) + log_std
}

/// Stacks observation rows into a matrix.
pub fn stack<S: Scalar>(rows: &[[S; OBS_DIM]]) -> Array2<S> {
    Array2::from_shape_fn((rows.len(), OBS_DIM), |(i, j)| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fresh_actor_is_exactly_zero() {
        let p: PolicyParams<f64> = PolicyParams::new(&[128, 128, 128], 3.0, 0.3f64.ln(), PolicyMode::Mrtl, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<[f64; OBS_DIM]> =
            (0..1000).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let means = p.forward_actor(stack(&rows).view());
        assert!(means.iter().all(|&m| m == 0.0));
        assert_eq!(p.log_std, 0.3f64.ln());
        assert_eq!(p.hidden_sizes(), vec![128, 128, 128]);
        assert!(p.value(stack(&rows).view()).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn identical_observations_identical_outputs() {
        let mut p: PolicyParams<f32> = PolicyParams::new(&[8, 8], 3.0, 0.3f64.ln(), PolicyMode::Mrtl, 3);
        p.actor.layers[2].w.fill(0.5);
        let o = [0.25f32; OBS_DIM];
        assert_eq!(p.act_one(&o), p.act_one(&o));
        let m = p.forward_actor(stack(&[o, o]).view());
        assert_eq!(m[0], m[1]);
        assert!(m[0].abs() <= 3.0);
    }

    #[test]
    fn gaussian_helpers() {
        let lp = gaussian_log_prob(0.0f64, 0.0, 0.0);
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((gaussian_entropy(0.0f64) - 1.418_938_533_204_672_7).abs() < 1e-12);
    }
}
