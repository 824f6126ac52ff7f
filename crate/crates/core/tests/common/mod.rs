//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod gradcheck;

use hdialog::corpus::{AttributeCatalog, Corpus, Item, ItemId, Partition};
use hdialog::policy::{a3c_select, a3c_update, q_update, Actor, ActorCritic, QNet, Transition};
use hdialog::rng::{self, Rng};
use rand::Rng as _;

/// Mutual information between the target and a yes/no answer, written as
/// prior entropy minus expected posterior entropy with explicit loops.
pub fn brute_info_gain(b: &[f64], col: &[f64]) -> f64 {
    let entropy = |v: &[f64]| -> f64 {
        let mut h = 0.0;
        for &x in v {
            if x > 0.0 {
                h -= x * x.ln();
            }
        }
        h
    };
    let mut p_yes = 0.0;
    for i in 0..b.len() {
        p_yes += b[i] * col[i];
    }
    let p_no = 1.0 - p_yes;
    let mut post_yes = vec![0.0; b.len()];
    let mut post_no = vec![0.0; b.len()];
    for i in 0..b.len() {
        if p_yes > 0.0 {
            post_yes[i] = b[i] * col[i] / p_yes;
        }
        if p_no > 0.0 {
            post_no[i] = b[i] * (1.0 - col[i]) / p_no;
        }
    }
    let mut expected = 0.0;
    if p_yes > 0.0 {
        expected += p_yes * entropy(&post_yes);
    }
    if p_no > 0.0 {
        expected += p_no * entropy(&post_no);
    }
    (entropy(b) - expected).max(0.0)
}

/// Direct product form of the belief, no logs.
pub fn brute_belief(rows: &[Vec<f64>], described: &[usize], pos: &[usize], neg: &[usize]) -> Vec<f64> {
    let mut b: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mut v = 1.0;
            for &w in described.iter().chain(pos) {
                v *= r[w];
            }
            for &w in neg {
                v *= 1.0 - r[w];
            }
            v
        })
        .collect();
    let z: f64 = b.iter().sum();
    for x in &mut b {
        *x /= z;
    }
    b
}

/// Best F1 over every distinct prediction set reachable by a threshold:
/// predicting positive for all items with `p >= t` for each observed `t`,
/// plus predicting nothing.
pub fn grid_scan_f1(probs: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return 0.0;
    }
    let mut best = 0.0f64;
    for &t in probs {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&p, &l) in probs.iter().zip(labels) {
            if p >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let fn_ = pos - tp;
        let f1 = if tp == 0 {
            0.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        };
        best = best.max(f1);
    }
    best
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn random_belief(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    if rng.random_bool(0.2) {
        let k = rng.random_range(0..n);
        b[k] = 0.0;
    }
    let z: f64 = b.iter().sum();
    if z == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    b.iter().map(|x| x / z).collect()
}

/// `n` states in a line; action 1 moves right, action 0 moves left (or stays
/// at 0). Each move costs -1; reaching the last state pays +10 and ends.
pub struct Chain {
    pub n: usize,
}

impl Chain {
    pub fn features(&self, s: usize, a: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2 * self.n];
        v[2 * s + a] = 1.0;
        v
    }

    pub fn candidates(&self, s: usize) -> Vec<Vec<f64>> {
        vec![self.features(s, 0), self.features(s, 1)]
    }

    pub fn step(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let next = if a == 1 { s + 1 } else { s.saturating_sub(1) };
        if next == self.n - 1 {
            (next, 10.0, true)
        } else {
            (next, -1.0, false)
        }
    }

    /// Optimal action per non-terminal state by value iteration.
    pub fn value_iteration(&self) -> Vec<usize> {
        let mut v = vec![0.0; self.n];
        for _ in 0..1000 {
            for s in 0..self.n - 1 {
                let q = |a| {
                    let (n, r, done) = self.step(s, a);
                    r + if done { 0.0 } else { v[n] }
                };
                v[s] = f64::max(q(0), q(1));
            }
        }
        (0..self.n - 1)
            .map(|s| {
                let q = |a| {
                    let (n, r, done) = self.step(s, a);
                    r + if done { 0.0 } else { v[n] }
                };
                usize::from(q(1) > q(0))
            })
            .collect()
    }

    /// Trains with ε-greedy exploration from random start states, one
    /// single-transition sweep per update. Returns the greedy policy.
    pub fn train(&self, updates: usize, seed: u64) -> Vec<usize> {
        let mut net = QNet::new(2 * self.n, 32, seed);
        let mut r = rng::stream(seed, &[1]);
        let mut s = 0;
        for _ in 0..updates {
            let a = if r.random_bool(0.3) {
                r.random_range(0..2)
            } else {
                hdialog::policy::argmax(&net.q_all(&self.candidates(s)))
            };
            let (n, reward, done) = self.step(s, a);
            let t = Transition {
                candidates: self.candidates(s),
                chosen: a,
                reward,
                next: (!done).then(|| self.candidates(n)),
            };
            q_update(&mut net, &[t], 1.0, 0.05).unwrap();
            s = if done { r.random_range(0..self.n - 1) } else { n };
        }
        (0..self.n - 1)
            .map(|s| hdialog::policy::argmax(&net.q_all(&self.candidates(s))))
            .collect()
    }
}

/// Items with given label rows; features are the labels plus a constant.
pub fn corpus_from_rows(rows: &[Vec<u8>], descriptions: &[Vec<usize>], partition: Partition) -> Corpus {
    let k = rows[0].len();
    let items = rows
        .iter()
        .zip(descriptions)
        .enumerate()
        .map(|(i, (r, d))| {
            let mut f: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            f.push(0.1);
            Item {
                id: i as ItemId,
                features: f,
                labels: r.clone(),
                description: d.clone(),
            }
        })
        .collect();
    let catalog = AttributeCatalog {
        names: (0..k).map(|w| format!("attr{w}")).collect(),
        partition,
    };
    Corpus::new(k + 1, catalog, items).unwrap()
}

pub fn small_corpus(seed: u64) -> Corpus {
    let cfg = hdialog::corpus::GenConfig {
        dim: 8,
        num_attributes: 6,
        item_count: 60,
        ..Default::default()
    };
    hdialog::corpus::generate_corpus(&cfg, seed).unwrap()
}

/// A fresh dialog on a small generated corpus with a random classifier:
/// 12 test items including the target, 10 disjoint train items.
pub fn random_dialog(corpus: &Corpus, seed: u64, max_length: usize) -> hdialog::env::DialogState {
    use hdialog::classifier::{ClassifierParams, LabelSource};
    use hdialog::env::{DialogState, EpisodeSetup, RewardConfig};
    use rand::seq::SliceRandom;

    let mut r = rng::stream(seed, &[0x7E57]);
    let mut ids = corpus.ids();
    ids.retain(|&i| !corpus.item(i).description.is_empty());
    ids.shuffle(&mut r);
    let target = ids[0];
    let mut test_set: Vec<ItemId> = ids[..12].to_vec();
    test_set.shuffle(&mut r);
    let train_set = ids[12..22].to_vec();
    let params = ClassifierParams::new(corpus.dim, corpus.num_attributes(), seed);
    let setup = EpisodeSetup {
        target,
        description: corpus.item(target).description.clone(),
        test_set,
        train_set,
    };
    let reward = RewardConfig {
        max_length,
        ..RewardConfig::default()
    };
    DialogState::reset(&setup, &params, corpus, &reward, LabelSource::ActiveLearning).unwrap()
}

/// Bandit with deterministic payoffs and one-hot arm features. Returns the
/// final probability of the best-paying arm.
pub fn bandit_best_arm_probability(payoff: &[f64], updates: usize, seed: u64) -> f64 {
    let n = payoff.len();
    let arms: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    let mut ac = ActorCritic {
        actor: Actor::new(n, 0.05),
        critic: QNet::new(n, 16, seed),
    };
    let mut r = rng::stream(seed, &[2]);
    for _ in 0..updates {
        let a = a3c_select(&ac.actor, &arms, true, &mut r).unwrap();
        let t = Transition {
            candidates: arms.clone(),
            chosen: a,
            reward: payoff[a],
            next: None,
        };
        a3c_update(&mut ac, &t, 1.0, 0.01).unwrap();
    }
    let best = hdialog::policy::argmax(payoff);
    ac.actor.probabilities(&arms)[best]
}
