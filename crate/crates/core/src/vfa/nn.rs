//! Flat-parameter dense layers and the Adam optimiser.
//!
//! Parameters live in one `Vec<f64>`; layers are views at fixed offsets so
//! copying, hashing, perturbing and averaging networks is a slice operation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Multilayer perceptron shape: ReLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { sizes }
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// He-uniform weights, zero biases. With `zero_last` the output layer
    /// starts at exactly zero.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], zero_last: bool, rng: &mut R) {
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / n_in as f64).sqrt();
            for p in &mut params[off..off + n_in * n_out] {
                *p = if zero_last && l == layers - 1 {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                };
            }
            off += n_in * n_out;
            params[off..off + n_out].fill(0.0);
            off += n_out;
        }
    }

    /// Forward pass; `acts[0]` is the input and `acts[l]` the output of
    /// layer `l` after its activation.
    pub fn forward(&self, params: &[f64], input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.sizes.len(), Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(input);
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, next) = acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            y.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    s += wi * xi;
                }
                y.push(if l + 1 < layers { s.max(0.0) } else { s });
            }
            off += n_in * n_out + n_out;
        }
    }

    /// Accumulates `d output` back through the layers into `grad` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, params: &[f64], acts: &[Vec<f64>], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut dy = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (d, a) in dy.iter_mut().zip(&acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let off = offsets[l];
            let x = &acts[l];
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let g = dy[o];
                if g == 0.0 {
                    continue;
                }
                let row = off + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += g * x[i];
                    dx[i] += g * params[row + i];
                }
                grad[off + n_in * n_out + o] += g;
            }
            dy = dx;
        }
        dy
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

/// Adds independent N(0, sigma^2) noise to every entry.
pub fn add_gaussian_noise<R: Rng + ?Sized>(params: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for p in params {
        *p += normal.sample(rng);
    }
}

/// `target <- tau * source + (1 - tau) * target`.
pub fn polyak(target: &mut [f64], source: &[f64], tau: f64) {
    if tau >= 1.0 {
        target.copy_from_slice(source);
        return;
    }
    for (t, s) in target.iter_mut().zip(source) {
        *t = tau * s + (1.0 - tau) * *t;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
