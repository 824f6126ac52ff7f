//! Two-branch multilabel attribute classifier.
//!
//! ```text
//! psi  = relu(W1ᵀx + b1)        p  = sigmoid((psi + psi') / tau)
//! psi' = relu(W2ᵀx + b2)        p' = sigmoid(psi' / tau')
//! ```
//!
//! The `p'` branch only receives loss from positive labels, which keeps
//! rare attributes from collapsing to "always negative".

mod labels;
mod loss;
mod thresholds;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use labels::{LabelEntry, LabelRecord, LabelRole, LabelSource, LabelStore};
pub use loss::{clamp_prob, loss, Gradients, PROB_CLAMP};
pub use thresholds::{best_threshold, tune_thresholds, AttributeStat, AttributeStats, ThresholdChoice};
pub use train::{grad_step, gradient, incremental_update, pretrain, Example, TrainConfig};

use crate::error::{Error, Result};
use crate::rng;

pub const MIN_TEMPERATURE: f64 = 0.01;

/// RMSProp squared-gradient accumulators, shaped like the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub tau: Vec<f64>,
    pub tau_prime: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub dim: usize,
    pub num_attributes: usize,
    /// `dim x num_attributes`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub tau: Vec<f64>,
    pub tau_prime: Vec<f64>,
    pub optimizer: RmsPropState,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
    pub f: Vec<f64>,
    pub p: Vec<f64>,
    pub p_prime: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ClassifierParams {
    /// Glorot-uniform weights, zero biases, unit temperatures.
    pub fn new(dim: usize, num_attributes: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0xC1A5]);
        let limit = (6.0 / (dim + num_attributes) as f64).sqrt();
        let mut init = || -> Vec<f64> {
            (0..dim * num_attributes)
                .map(|_| r.random_range(-limit..=limit))
                .collect()
        };
        let w1 = init();
        let w2 = init();
        Self::from_parts(
            dim,
            num_attributes,
            w1,
            vec![0.0; num_attributes],
            w2,
            vec![0.0; num_attributes],
        )
    }

    pub fn zeros(dim: usize, num_attributes: usize) -> Self {
        let n = dim * num_attributes;
        Self::from_parts(
            dim,
            num_attributes,
            vec![0.0; n],
            vec![0.0; num_attributes],
            vec![0.0; n],
            vec![0.0; num_attributes],
        )
    }

    pub fn from_parts(dim: usize, k: usize, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>) -> Self {
        assert_eq!(w1.len(), dim * k);
        assert_eq!(w2.len(), dim * k);
        assert_eq!(b1.len(), k);
        assert_eq!(b2.len(), k);
        ClassifierParams {
            dim,
            num_attributes: k,
            w1,
            b1,
            w2,
            b2,
            tau: vec![1.0; k],
            tau_prime: vec![1.0; k],
            optimizer: RmsPropState {
                w1: vec![0.0; dim * k],
                b1: vec![0.0; k],
                w2: vec![0.0; dim * k],
                b2: vec![0.0; k],
                tau: vec![0.0; k],
                tau_prime: vec![0.0; k],
            },
            step: 0,
        }
    }

    pub fn forward(&self, features: &[f64]) -> Result<ClassifierOutput> {
        self.check_input(features)?;
        let k = self.num_attributes;
        let (z1, z2) = self.pre_activations(features);
        let psi: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let psi_prime: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();
        let f: Vec<f64> = psi.iter().zip(&psi_prime).map(|(a, b)| a + b).collect();
        let p = (0..k).map(|w| clamp_prob(sigmoid(f[w] / self.tau[w]))).collect();
        let p_prime = (0..k)
            .map(|w| clamp_prob(sigmoid(psi_prime[w] / self.tau_prime[w])))
            .collect();
        Ok(ClassifierOutput {
            psi,
            psi_prime,
            f,
            p,
            p_prime,
        })
    }

    /// Per-attribute probabilities `p`, clamped away from 0 and 1.
    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let (z1, z2) = self.pre_activations(features);
        Ok((0..self.num_attributes)
            .map(|w| clamp_prob(sigmoid((z1[w].max(0.0) + z2[w].max(0.0)) / self.tau[w])))
            .collect())
    }

    pub(crate) fn pre_activations(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.num_attributes;
        let mut z1 = self.b1.clone();
        let mut z2 = self.b2.clone();
        for (d, &xd) in x.iter().enumerate() {
            if xd == 0.0 {
                continue;
            }
            let row1 = &self.w1[d * k..(d + 1) * k];
            let row2 = &self.w2[d * k..(d + 1) * k];
            for w in 0..k {
                z1[w] += row1[w] * xd;
                z2[w] += row2[w] * xd;
            }
        }
        (z1, z2)
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: features.len(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("classifier input"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.tau, &self.tau_prime]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

pub const SNAPSHOT_FORMAT: &str = "hdialog-classifier";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotBlob {
    format: String,
    version: u32,
    params: ClassifierParams,
}

/// Serialises parameters, temperatures, optimizer state and step counter.
pub fn snapshot(params: &ClassifierParams) -> Vec<u8> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        format: &'a str,
        version: u32,
        params: &'a ClassifierParams,
    }
    serde_json::to_vec(&Borrowed {
        format: SNAPSHOT_FORMAT,
        version: SNAPSHOT_VERSION,
        params,
    })
    .expect("classifier params serialise")
}

pub fn restore(blob: &[u8]) -> Result<ClassifierParams> {
    let parsed: SnapshotBlob = serde_json::from_slice(blob).map_err(|e| Error::Snapshot(e.to_string()))?;
    if parsed.format != SNAPSHOT_FORMAT {
        return Err(Error::Snapshot(format!("unexpected format tag {:?}", parsed.format)));
    }
    if parsed.version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "version {} not supported (expected {SNAPSHOT_VERSION})",
            parsed.version
        )));
    }
    let p = parsed.params;
    let (d, k) = (p.dim, p.num_attributes);
    let shapes_ok = p.w1.len() == d * k
        && p.w2.len() == d * k
        && [&p.b1, &p.b2, &p.tau, &p.tau_prime].iter().all(|v| v.len() == k)
        && p.optimizer.w1.len() == d * k
        && p.optimizer.w2.len() == d * k
        && [
            &p.optimizer.b1,
            &p.optimizer.b2,
            &p.optimizer.tau,
            &p.optimizer.tau_prime,
        ]
        .iter()
        .all(|v| v.len() == k);
    if !shapes_ok {
        return Err(Error::Snapshot("parameter shapes are inconsistent".into()));
    }
    if !p.is_finite() {
        return Err(Error::Snapshot("non-finite parameter".into()));
    }
    Ok(p)
}
