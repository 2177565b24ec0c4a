//! Generalized advantage estimation.

use crate::scalar::Scalar;

/// Advantages and value targets for one contiguous trajectory.
///
/// `bootstrap` is the value of the state after the last step; it is ignored
/// when `terminal` is set.
pub fn compute_gae<S: Scalar>(
    rewards: &[S],
    values: &[S],
    bootstrap: S,
    terminal: bool,
    gamma: S,
    lambda: S,
) -> (Vec<S>, Vec<S>) {
    assert_eq!(rewards.len(), values.len(), "one value estimate per reward");
    let n = rewards.len();
    let mut adv = vec![S::zero(); n];
    let mut next_value = if terminal { S::zero() } else { bootstrap };
    let mut running = S::zero();
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (adv, targets)
}

/// Shifts and scales in place to zero mean and unit variance.
pub fn normalize<S: Scalar>(xs: &mut [S]) {
    if xs.is_empty() {
        return;
    }
    let n = S::lit(xs.len() as f64);
    let mean = xs.iter().copied().sum::<S>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
    let std = var.sqrt() + S::lit(1e-8);
    for x in xs {
        *x = (*x - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // A_t = sum_k (gamma*lambda)^k delta_{t+k}
    fn brute_force(r: &[f64], v: &[f64], boot: f64, terminal: bool, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next = |t: usize| if t + 1 < n { v[t + 1] } else if terminal { 0.0 } else { boot };
        let delta: Vec<f64> = (0..n).map(|t| r[t] + g * next(t) - v[t]).collect();
        (0..n).map(|t| (t..n).map(|k| (g * l).powi((k - t) as i32) * delta[k]).sum()).collect()
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for terminal in [false, true] {
            let r: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (adv, targets) = compute_gae(&r, &v, 1.7, terminal, 0.99, 0.95);
            let oracle = brute_force(&r, &v, 1.7, terminal, 0.99, 0.95);
            for t in 0..5 {
                assert!((adv[t] - oracle[t]).abs() < 1e-12);
                assert!((targets[t] - (oracle[t] + v[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0f64, -0.5, 2.0];
        let v = [0.3, 0.1, -0.4];
        let (adv, _) = compute_gae(&r, &v, 0.8, false, 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * 0.1 - 0.3)).abs() < 1e-12);
        assert!((adv[1] - (-0.5 + 0.9 * -0.4 - 0.1)).abs() < 1e-12);
        assert!((adv[2] - (2.0 + 0.9 * 0.8 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn constant_rewards_give_constant_advantages() {
        // V = r / (1 - gamma) is not needed: with gamma = 1 every delta is r.
        let r = [0.5; 6];
        let v = [2.0; 6];
        let (adv, _) = compute_gae(&r, &v, 2.0, false, 1.0, 0.0);
        assert!(adv.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn normalization() {
        let mut xs = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
        let mut empty: Vec<f64> = vec![];
        normalize(&mut empty);
    }
}
