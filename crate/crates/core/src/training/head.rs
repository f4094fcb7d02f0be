use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;

/// Two-logit linear classifier over backbone features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub feature_dim: usize,
    /// Row-major 2 x feature_dim.
    pub weights: Vec<f64>,
    pub bias: [f64; 2],
}

/// Gradient with the same layout as [`LinearHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: [f64; 2],
}

impl LinearHead {
    /// Uniform in ±1/sqrt(fan_in) for weights and biases.
    pub fn init(feature_dim: usize, seed: u64) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..2 * feature_dim).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = [rng.random_range(-bound..bound), rng.random_range(-bound..bound)];
        Self { feature_dim, weights, bias }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 2
    }

    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let d = self.feature_dim;
        let dot = |row: &[f64]| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        [dot(&self.weights[..d]) + self.bias[0], dot(&self.weights[d..]) + self.bias[1]]
    }

    /// Argmax of the logits; ties go to label 0.
    pub fn predict(&self, x: &[f64]) -> Label {
        let z = self.logits(x);
        if z[1] > z[0] {
            Label::NotProEd
        } else {
            Label::ProEd
        }
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &[(&[f64], Label)]) -> f64 {
        let total: f64 = batch.iter().map(|(x, y)| nll(self.logits(x), *y)).sum();
        total / batch.len() as f64
    }

    /// Mean cross-entropy and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], Label)]) -> (f64, HeadGradient) {
        let d = self.feature_dim;
        let n = batch.len() as f64;
        let mut g = HeadGradient { weights: vec![0.0; 2 * d], bias: [0.0; 2] };
        let mut total = 0.0;
        for (x, y) in batch {
            let z = self.logits(x);
            total += nll(z, *y);
            let p = softmax(z);
            for k in 0..2 {
                let delta = (p[k] - f64::from(u8::from(y.as_u8() as usize == k))) / n;
                g.bias[k] += delta;
                for (gw, xv) in g.weights[k * d..(k + 1) * d].iter_mut().zip(x.iter()) {
                    *gw += delta * xv;
                }
            }
        }
        (total / n, g)
    }
}

fn softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn nll(z: [f64; 2], y: Label) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[y.as_u8() as usize]
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = momentum * v + g; theta -= lr * v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity_w: Vec<f64>,
    velocity_b: [f64; 2],
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, feature_dim: usize) -> Self {
        Self { learning_rate, momentum, velocity_w: vec![0.0; 2 * feature_dim], velocity_b: [0.0; 2] }
    }

    pub fn step(&mut self, head: &mut LinearHead, g: &HeadGradient) {
        for ((w, v), gw) in head.weights.iter_mut().zip(&mut self.velocity_w).zip(&g.weights) {
            *v = self.momentum * *v + gw;
            *w -= self.learning_rate * *v;
        }
        for k in 0..2 {
            self.velocity_b[k] = self.momentum * self.velocity_b[k] + g.bias[k];
            head.bias[k] -= self.learning_rate * self.velocity_b[k];
        }
    }
}
