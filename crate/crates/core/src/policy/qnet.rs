use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const DEFAULT_HIDDEN: usize = 100;

/// One-hidden-layer ReLU regressor `Q(φ) = w2·relu(W1 φ + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNet {
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Gradient of `½(Q(φ) - target)²`, shaped like [`QNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct QGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// One sub-policy transition. `next` is `None` at episode end.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub candidates: Vec<Vec<f64>>,
    pub chosen: usize,
    pub reward: f64,
    pub next: Option<Vec<Vec<f64>>>,
}

impl Transition {
    pub fn features(&self) -> &[f64] {
        &self.candidates[self.chosen]
    }
}

impl QNet {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x0E7]);
        let l1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        QNet {
            input_dim,
            hidden,
            w1: (0..hidden * input_dim).map(|_| r.random_range(-l1..=l1)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| r.random_range(-l2..=l2)).collect(),
            b2: 0.0,
        }
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim);
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn q(&self, x: &[f64]) -> f64 {
        let z = self.hidden_pre(x);
        self.b2 + z.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f64>()
    }

    pub fn q_all(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        candidates.iter().map(|c| self.q(c)).collect()
    }

    pub fn max_q(&self, candidates: &[Vec<f64>]) -> f64 {
        candidates.iter().map(|c| self.q(c)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn gradient(&self, x: &[f64], target: f64) -> QGradient {
        let z = self.hidden_pre(x);
        let q = self.b2 + z.iter().zip(&self.w2).map(|(z, w)| z.max(0.0) * w).sum::<f64>();
        let delta = q - target;
        let mut g = QGradient {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: z.iter().map(|z| delta * z.max(0.0)).collect(),
            b2: delta,
        };
        for (h, &zh) in z.iter().enumerate() {
            if zh > 0.0 {
                let dz = delta * self.w2[h];
                g.b1[h] = dz;
                let row = &mut g.w1[h * self.input_dim..(h + 1) * self.input_dim];
                for (gw, v) in row.iter_mut().zip(x) {
                    *gw = dz * v;
                }
            }
        }
        g
    }

    pub fn sgd_step(&mut self, x: &[f64], target: f64, lr: f64) {
        let g = self.gradient(x, target);
        for (w, d) in self.w1.iter_mut().zip(&g.w1) {
            *w -= lr * d;
        }
        for (w, d) in self.b1.iter_mut().zip(&g.b1) {
            *w -= lr * d;
        }
        for (w, d) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * d;
        }
        self.b2 -= lr * g.b2;
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite() && self.w1.iter().chain(&self.b1).chain(&self.w2).all(|x| x.is_finite())
    }
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over candidate feature vectors.
pub fn q_select(net: &QNet, candidates: &[Vec<f64>], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    match candidates.len() {
        0 => Err(Error::Empty("q_select candidates")),
        1 => Ok(0),
        n => {
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                Ok(rng.random_range(0..n))
            } else {
                Ok(argmax(&net.q_all(candidates)))
            }
        }
    }
}

/// Bootstrapped target `r + γ max Q(s′, ·)`; `r` when terminal.
pub fn q_target(net: &QNet, t: &Transition, gamma: f64) -> f64 {
    match &t.next {
        Some(next) if !next.is_empty() => t.reward + gamma * net.max_q(next),
        _ => t.reward,
    }
}

/// One SGD step per transition; targets come from a copy frozen at the
/// start of the sweep.
pub fn q_update(net: &mut QNet, transitions: &[Transition], gamma: f64, lr: f64) -> Result<()> {
    let frozen = net.clone();
    for t in transitions {
        let target = q_target(&frozen, t, gamma);
        if !target.is_finite() {
            return Err(Error::NonFinite("Q-learning target"));
        }
        net.sgd_step(t.features(), target, lr);
    }
    if !net.is_finite() {
        return Err(Error::NonFinite("Q-network parameters"));
    }
    Ok(())
}
