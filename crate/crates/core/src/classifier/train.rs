use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{accumulate_item, Gradients};
use super::{ClassifierParams, MIN_TEMPERATURE};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `decay_rate` every `decay_steps` steps
    /// (continuously, not staircase).
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub incremental_batch_size: usize,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.9,
            learning_rate: 0.1,
            decay_rate: 0.9,
            decay_steps: 400,
            epochs: 100,
            batch_size: 256,
            incremental_batch_size: 128,
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.batch_size == 0 || self.incremental_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.decay_steps == 0 {
            return Err(Error::Config("decay_steps must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 || !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::Config("invalid learning rate or RMSProp decay".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        self.learning_rate * self.decay_rate.powf(step as f64 / self.decay_steps as f64)
    }
}

/// One training example: features plus the attribute labels known for it.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub labels: Vec<u8>,
    pub mask: Vec<bool>,
}

impl<'a> Example<'a> {
    pub fn fully_labeled(features: &'a [f64], labels: &[u8]) -> Self {
        Example {
            features,
            labels: labels.to_vec(),
            mask: vec![true; labels.len()],
        }
    }
}

const CHUNK: usize = 32;

/// Mean loss and mean gradient over `batch`. Items are processed in fixed
/// chunks and chunk results summed in order, so the result does not depend
/// on the execution strategy.
pub fn gradient(params: &ClassifierParams, batch: &[Example<'_>], lambda: f64, exec: Execution) -> (f64, Gradients) {
    let (d, k) = (params.dim, params.num_attributes);
    let chunks: Vec<&[Example<'_>]> = batch.chunks(CHUNK).collect();
    let partials = exec.map(&chunks, |chunk| {
        let mut g = Gradients::zeros(d, k);
        let mut l = 0.0;
        for ex in chunk.iter() {
            l += accumulate_item(params, ex.features, &ex.labels, &ex.mask, lambda, &mut g);
        }
        (l, g)
    });
    let mut total = Gradients::zeros(d, k);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_assign(g);
    }
    let n = batch.len().max(1) as f64;
    total.scale(1.0 / n);
    (loss / n, total)
}

/// One RMSProp step on the mean batch loss. Returns the pre-step batch loss.
/// On a non-finite gradient the parameters are left untouched.
pub fn grad_step(
    params: &mut ClassifierParams,
    batch: &[Example<'_>],
    config: &TrainConfig,
    exec: Execution,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    for ex in batch {
        if ex.features.len() != params.dim {
            return Err(Error::Dimension {
                expected: params.dim,
                actual: ex.features.len(),
            });
        }
    }
    let (loss, grads) = gradient(params, batch, config.lambda, exec);
    if !grads.is_finite() || !loss.is_finite() {
        return Err(Error::NonFinite("classifier gradient"));
    }
    let lr = config.learning_rate_at(params.step);
    let (rho, eps) = (config.rms_decay, config.rms_epsilon);
    let ClassifierParams {
        w1,
        b1,
        w2,
        b2,
        tau,
        tau_prime,
        optimizer: o,
        ..
    } = &mut *params;
    let slots = [
        (w1, &mut o.w1),
        (b1, &mut o.b1),
        (w2, &mut o.w2),
        (b2, &mut o.b2),
        (tau, &mut o.tau),
        (tau_prime, &mut o.tau_prime),
    ];
    for ((param, acc), grad) in slots.into_iter().zip(grads.slices()) {
        for ((p, a), g) in param.iter_mut().zip(acc.iter_mut()).zip(grad) {
            *a = rho * *a + (1.0 - rho) * g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
    }
    for t in params.tau.iter_mut().chain(params.tau_prime.iter_mut()) {
        *t = t.max(MIN_TEMPERATURE);
    }
    params.step += 1;
    Ok(loss)
}

/// Shuffled mini-batch epochs over `examples`.
pub fn pretrain(
    params: &mut ClassifierParams,
    examples: &[Example<'_>],
    config: &TrainConfig,
    exec: Execution,
) -> Result<()> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("pretraining items"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(config.seed, &[0x9E7, epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| examples[i].clone()).collect();
            grad_step(params, &batch, config, exec)?;
        }
        log::debug!("pretrain epoch {epoch} done (step {})", params.step);
    }
    Ok(())
}

/// A single shuffled epoch over items whose labels changed, in batches of
/// `incremental_batch_size`. Each example's mask restricts the loss to the
/// attributes actually labelled for it.
pub fn incremental_update(
    params: &mut ClassifierParams,
    touched: &[Example<'_>],
    config: &TrainConfig,
    exec: Execution,
) -> Result<()> {
    if touched.is_empty() {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..touched.len()).collect();
    order.shuffle(&mut rng::stream(config.seed, &[0x1AC, params.step]));
    for chunk in order.chunks(config.incremental_batch_size) {
        let batch: Vec<Example<'_>> = chunk.iter().map(|&i| touched[i].clone()).collect();
        grad_step(params, &batch, config, exec)?;
    }
    Ok(())
}
