//! Small dense networks with batched forward and backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Fully connected layer, `y = x W + b` with `W` shaped `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

/// Multilayer perceptron: tanh on every hidden layer, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

/// Layer inputs and hidden activations saved by [`Mlp::forward_cached`].
#[derive(Clone, Debug)]
pub struct Cache<S> {
    inputs: Vec<Array2<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// `sizes` lists every width from input to output. Weights are drawn
    /// from `N(0, 1/fan_in)`, biases start at zero; `zero_head` also zeroes
    /// the output layer's weights.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], zero_head: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
                let w = if zero_head && k == n - 1 {
                    Array2::zeros((fan_in, fan_out))
                } else {
                    let std = 1.0 / (fan_in as f64).sqrt();
                    Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        S::lit(rng.sample::<f64, _>(StandardNormal) * std)
                    })
                };
                Dense { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.len()) })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<S>) -> Array2<S> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if k < last {
                h.mapv_inplace(|z| z.tanh());
            }
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<S>) -> (Array2<S>, Cache<S>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            inputs.push(h);
            h = if k < last { z.mapv(|v| v.tanh()) } else { z };
        }
        (h, Cache { inputs })
    }

    /// Gradient of `sum(grad_out * output)` with respect to every weight.
    pub fn backward(&self, cache: &Cache<S>, grad_out: ArrayView2<S>) -> Self {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned();
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                // input = tanh(previous pre-activation)
                let mut back = delta.dot(&self.layers[k].w.t());
                back.zip_mut_with(input, |d, &a| *d = *d * (S::one() - a * a));
                delta = back;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        Self { layers: grads }
    }

    /// Appends all parameters (layer by layer, weights row-major then bias).
    pub fn write_flat(&self, out: &mut Vec<S>) {
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
    }

    /// Overwrites parameters from `src` in [`Mlp::write_flat`] order and
    /// returns the number of values consumed.
    pub fn read_flat(&mut self, src: &[S]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = src[k];
                k += 1;
            }
            for b in l.b.iter_mut() {
                *b = src[k];
                k += 1;
            }
        }
        k
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp<f64> {
        Mlp::new(&[3, 8, 8, 2], false, &mut ChaCha8Rng::seed_from_u64(7))
    }

    #[test]
    fn zero_head_outputs_bias_only() {
        let m: Mlp<f64> = Mlp::new(&[4, 16, 1], true, &mut ChaCha8Rng::seed_from_u64(1));
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 - 7.0);
        assert!(m.forward(x.view()).iter().all(|&y| y == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let m = net();
        let mut flat = Vec::new();
        m.write_flat(&mut flat);
        assert_eq!(flat.len(), m.param_count());
        let mut z = m.zeros_like();
        assert_eq!(z.read_flat(&flat), flat.len());
        assert_eq!(z, m);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = net();
        let x = array![[0.3, -0.2, 0.9], [-1.0, 0.5, 0.1]];
        let g = array![[1.0, -0.5], [0.25, 2.0]];
        let objective = |m: &Mlp<f64>| (m.forward(x.view()) * &g).sum();
        let (_, cache) = m.forward_cached(x.view());
        let grads = m.backward(&cache, g.view());
        let mut flat = Vec::new();
        m.write_flat(&mut flat);
        let mut analytic = Vec::new();
        grads.write_flat(&mut analytic);
        let eps = 1e-6;
        for i in 0..flat.len() {
            let mut p = m.clone();
            let mut q = flat.clone();
            q[i] += eps;
            p.read_flat(&q);
            let up = objective(&p);
            q[i] -= 2.0 * eps;
            p.read_flat(&q);
            let down = objective(&p);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - analytic[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", analytic[i]);
        }
    }
}
