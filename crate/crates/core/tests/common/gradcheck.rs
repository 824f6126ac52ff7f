//! Analytic gradients against central finite differences.

use hdialog::classifier::{gradient, loss, ClassifierParams, Example};
use hdialog::policy::{Actor, QNet};
use hdialog::rng;
use hdialog::Execution;
use rand::Rng as _;

use super::rel_err;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn mean_loss(params: &ClassifierParams, batch: &[Example<'_>], lambda: f64) -> f64 {
    batch
        .iter()
        .map(|e| loss(&params.forward(e.features).unwrap(), &e.labels, &e.mask, lambda))
        .sum::<f64>()
        / batch.len() as f64
}

/// Max relative error over every classifier parameter on one random instance.
pub fn classifier_max_error(seed: u64) -> f64 {
    let (d, k) = (5, 3);
    let mut r = rng::stream(seed, &[77]);
    let mut params = ClassifierParams::new(d, k, seed);
    for b in params.b1.iter_mut().chain(params.b2.iter_mut()) {
        *b = r.random_range(0.1..0.5);
    }
    for t in params.tau.iter_mut().chain(params.tau_prime.iter_mut()) {
        *t = r.random_range(0.5..2.0);
    }
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let batch: Vec<Example<'_>> = xs
        .iter()
        .map(|x| Example {
            features: x,
            labels: (0..k).map(|_| r.random_range(0..2u8)).collect(),
            mask: (0..k).map(|_| r.random_bool(0.8)).collect(),
        })
        .collect();
    let lambda = 0.9;
    let (_, g) = gradient(&params, &batch, lambda, Execution::Sequential);

    let mut worst = 0.0f64;
    macro_rules! check {
        ($field:ident) => {
            for i in 0..params.$field.len() {
                let orig = params.$field[i];
                params.$field[i] = orig + H;
                let up = mean_loss(&params, &batch, lambda);
                params.$field[i] = orig - H;
                let down = mean_loss(&params, &batch, lambda);
                params.$field[i] = orig;
                let numeric = (up - down) / (2.0 * H);
                let e = rel_err(g.$field[i], numeric);
                if g.$field[i].abs().max(numeric.abs()) > 1e-7 {
                    worst = worst.max(e);
                }
            }
        };
    }
    check!(w1);
    check!(b1);
    check!(w2);
    check!(b2);
    check!(tau);
    check!(tau_prime);
    worst
}

pub fn qnet_max_error(seed: u64) -> f64 {
    let mut r = rng::stream(seed, &[78]);
    let mut net = QNet::new(6, 10, seed);
    for b in &mut net.b1 {
        *b = r.random_range(0.0..0.3);
    }
    let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let target = r.random_range(-5.0..5.0);
    let g = net.gradient(&x, target);
    let obj = |n: &QNet| 0.5 * (n.q(&x) - target).powi(2);
    let mut worst = 0.0f64;
    macro_rules! check {
        ($field:ident) => {
            for i in 0..net.$field.len() {
                let orig = net.$field[i];
                net.$field[i] = orig + H;
                let up = obj(&net);
                net.$field[i] = orig - H;
                let down = obj(&net);
                net.$field[i] = orig;
                let numeric = (up - down) / (2.0 * H);
                if g.$field[i].abs().max(numeric.abs()) > 1e-7 {
                    worst = worst.max(rel_err(g.$field[i], numeric));
                }
            }
        };
    }
    check!(w1);
    check!(b1);
    check!(w2);
    let orig = net.b2;
    net.b2 = orig + H;
    let up = obj(&net);
    net.b2 = orig - H;
    let down = obj(&net);
    net.b2 = orig;
    worst.max(rel_err(g.b2, (up - down) / (2.0 * H)))
}

#[allow(clippy::needless_range_loop)]
pub fn actor_max_error(seed: u64) -> f64 {
    let mut r = rng::stream(seed, &[79]);
    let dim = 5;
    let mut actor = Actor {
        theta: (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
        alpha: 0.01,
    };
    let cands: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let chosen = r.random_range(0..4);
    let g = actor.log_prob_gradient(&cands, chosen);
    let mut worst = 0.0f64;
    for i in 0..dim {
        let orig = actor.theta[i];
        actor.theta[i] = orig + H;
        let up = actor.log_prob(&cands, chosen);
        actor.theta[i] = orig - H;
        let down = actor.log_prob(&cands, chosen);
        actor.theta[i] = orig;
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * H)));
    }
    worst
}
