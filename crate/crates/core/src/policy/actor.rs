use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::qnet::{argmax, q_target, QNet, Transition};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Linear softmax actor `π(a|s) ∝ exp(θᵀφ(s, a))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub theta: Vec<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: Actor,
    pub critic: QNet,
}

impl Actor {
    pub fn new(dim: usize, alpha: f64) -> Self {
        Actor {
            theta: vec![0.0; dim],
            alpha,
        }
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.theta.iter().zip(x).map(|(t, v)| t * v).sum()
    }

    pub fn probabilities(&self, candidates: &[Vec<f64>]) -> Vec<f64> {
        let logits: Vec<f64> = candidates.iter().map(|c| self.logit(c)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn log_prob(&self, candidates: &[Vec<f64>], chosen: usize) -> f64 {
        let logits: Vec<f64> = candidates.iter().map(|c| self.logit(c)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        logits[chosen] - lse
    }

    /// `∇θ log π(chosen) = φ(chosen) - Σ_b π(b) φ(b)`.
    pub fn log_prob_gradient(&self, candidates: &[Vec<f64>], chosen: usize) -> Vec<f64> {
        let pi = self.probabilities(candidates);
        let mut g = candidates[chosen].clone();
        for (p, c) in pi.iter().zip(candidates) {
            for (gi, v) in g.iter_mut().zip(c) {
                *gi -= p * v;
            }
        }
        g
    }
}

/// `V(s) = Σ_a π(a|s) Q(s, a)`.
pub fn state_value(actor: &Actor, critic: &QNet, candidates: &[Vec<f64>]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    actor
        .probabilities(candidates)
        .iter()
        .zip(critic.q_all(candidates))
        .map(|(p, q)| p * q)
        .sum()
}

/// Samples from the softmax when `explore`, otherwise takes its argmax.
pub fn a3c_select(actor: &Actor, candidates: &[Vec<f64>], explore: bool, rng: &mut Rng) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Empty("actor candidates"));
    }
    let pi = actor.probabilities(candidates);
    if !explore {
        return Ok(argmax(&pi));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(pi.len() - 1)
}

/// `A = r + γ V(s′) - V(s)`, with `V(s′) = 0` at episode end.
pub fn advantage(actor: &Actor, critic: &QNet, t: &Transition, gamma: f64) -> f64 {
    let next_v = t.next.as_deref().map_or(0.0, |next| state_value(actor, critic, next));
    t.reward + gamma * next_v - state_value(actor, critic, &t.candidates)
}

/// Actor ascent along `A ∇ log π` and a critic regression step toward the
/// Q-learning target, both using the pre-update critic.
pub fn a3c_update(ac: &mut ActorCritic, t: &Transition, gamma: f64, critic_lr: f64) -> Result<()> {
    let a = advantage(&ac.actor, &ac.critic, t, gamma);
    if !a.is_finite() {
        return Err(Error::NonFinite("actor-critic advantage"));
    }
    let target = q_target(&ac.critic, t, gamma);
    let grad = ac.actor.log_prob_gradient(&t.candidates, t.chosen);
    let step = ac.actor.alpha * a;
    for (th, g) in ac.actor.theta.iter_mut().zip(grad) {
        *th += step * g;
    }
    ac.critic.sgd_step(t.features(), target, critic_lr);
    if !(ac.critic.is_finite() && ac.actor.theta.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("actor-critic parameters"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_theta_is_uniform() {
        let a = Actor::new(2, 0.01);
        let p = a.probabilities(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]]);
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logit_dominates() {
        let a = Actor {
            theta: vec![1.0],
            alpha: 0.01,
        };
        let p = a.probabilities(&[vec![20.0], vec![0.0]]);
        assert!(p[0] > 0.999_999);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_actor_equal_q_value() {
        let a = Actor::new(2, 0.01);
        let mut critic = QNet::new(2, 3, 0);
        critic.w2 = vec![0.0; 3];
        critic.b2 = 4.5;
        let v = state_value(&a, &critic, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((v - 4.5).abs() < 1e-15);
        let t = Transition {
            candidates: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            chosen: 0,
            reward: 2.0,
            next: None,
        };
        assert!((advantage(&a, &critic, &t, 1.0) - (2.0 - 4.5)).abs() < 1e-15);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let mut ac = ActorCritic {
            actor: Actor::new(2, 0.1),
            critic: QNet::new(2, 4, 3),
        };
        ac.critic.w2 = vec![0.0; 4];
        let t = Transition {
            candidates: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            chosen: 1,
            reward: 5.0,
            next: None,
        };
        let before = ac.actor.probabilities(&t.candidates)[1];
        a3c_update(&mut ac, &t, 1.0, 0.01).unwrap();
        assert!(ac.actor.probabilities(&t.candidates)[1] > before);
    }
}
