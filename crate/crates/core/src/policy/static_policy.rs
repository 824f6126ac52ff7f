use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::MetaAction;
use crate::classifier::AttributeStats;
use crate::corpus::Corpus;
use crate::env::{DialogAction, DialogState};
use crate::error::{Error, Result};
use crate::features::{ActiveLearningSummary, ClarificationSummary};
use crate::grounding;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticPolicyConfig {
    /// Minimum information gain worth a clarification.
    pub g_min: f64,
    /// Stop clarifying once the top belief reaches this.
    pub b_conf: f64,
    /// Maximum clarifications per dialog.
    pub k_c: usize,
    /// Turn after which the policy guesses. `None` means the dialog length limit.
    pub t_al: Option<usize>,
    pub p_label: f64,
}

impl Default for StaticPolicyConfig {
    fn default() -> Self {
        StaticPolicyConfig {
            g_min: 0.01,
            b_conf: 0.95,
            k_c: 10,
            t_al: None,
            p_label: 0.5,
        }
    }
}

impl StaticPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_label) {
            return Err(Error::Config("p_label must lie in [0, 1]".into()));
        }
        if !(self.g_min.is_finite() && self.b_conf.is_finite()) {
            return Err(Error::Config("static thresholds must be finite".into()));
        }
        Ok(())
    }

    pub fn t_al(&self, max_length: usize) -> usize {
        self.t_al.unwrap_or(max_length).min(max_length)
    }
}

/// `(attribute, info gain, F1)` candidates → highest gain, then highest F1,
/// then lowest attribute. Candidates with F1 = 0 are skipped.
pub fn pick_clarification(candidates: &[(usize, f64, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &(w, j, f1) in candidates {
        if f1 <= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bw, bj, bf)) => j > bj || (j == bj && (f1 > bf || (f1 == bf && w < bw))),
        };
        if better {
            best = Some((w, j, f1));
        }
    }
    best.map(|b| b.0)
}

pub fn static_clarification(state: &DialogState, stats: &AttributeStats) -> Option<usize> {
    let candidates: Vec<(usize, f64, f64)> = state
        .unasked_clarifications()
        .into_iter()
        .map(|w| {
            (
                w,
                grounding::info_gain(&state.belief.b, state.test_probs.column(w)),
                stats.f1(w),
            )
        })
        .collect();
    pick_clarification(&candidates)
}

/// Label pool entries carry `|p - 0.5|`. With probability `p_label` the
/// smallest distance wins (ties: lowest attribute); otherwise a uniform
/// example query. Falls back to the other pool when one is empty.
pub fn pick_active_learning(
    label_pool: &[(DialogAction, f64)],
    example_pool: &[DialogAction],
    p_label: f64,
    rng: &mut Rng,
) -> Option<DialogAction> {
    let want_label = rng.random::<f64>() < p_label;
    let best_label = || {
        label_pool
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.attribute().cmp(&b.0.attribute())))
            .map(|x| x.0)
    };
    if want_label && !label_pool.is_empty() {
        return best_label();
    }
    if let Some(a) = example_pool.choose(rng) {
        return Some(*a);
    }
    best_label()
}

fn active_learning_pools(state: &DialogState) -> (Vec<(DialogAction, f64)>, Vec<DialogAction>) {
    let mut labels = Vec::new();
    let mut examples = Vec::new();
    for a in state.active_learning_candidates() {
        match a {
            DialogAction::LabelQuery { attribute, item } => {
                let j = state.train_set.iter().position(|&i| i == item).expect("train item");
                labels.push((a, (state.train_probs.get(j, attribute) - 0.5).abs()));
            }
            DialogAction::ExampleQuery { .. } => examples.push(a),
            _ => {}
        }
    }
    (labels, examples)
}

pub fn static_active_learning(state: &DialogState, config: &StaticPolicyConfig, rng: &mut Rng) -> Option<DialogAction> {
    let (labels, examples) = active_learning_pools(state);
    pick_active_learning(&labels, &examples, config.p_label, rng)
}

pub fn static_decision(
    state: &DialogState,
    config: &StaticPolicyConfig,
    best_clar: Option<&ClarificationSummary>,
    best_al: Option<&ActiveLearningSummary>,
) -> MetaAction {
    let max_length = state.reward.max_length;
    if state.turn >= max_length {
        return MetaAction::Guess;
    }
    let b1 = grounding::belief_summary(&state.belief.b).top;
    if let Some(c) = best_clar {
        if c.info_gain >= config.g_min && b1 < config.b_conf && state.clarifications < config.k_c {
            return MetaAction::Clarify;
        }
    }
    if state.turn < config.t_al(max_length) && best_al.is_some() {
        return MetaAction::ActiveLearning;
    }
    MetaAction::Guess
}

/// The unasked clarification whose true answer raises the target's belief
/// the most. `None` when nothing improves it.
pub fn oracle_clarification(state: &DialogState, corpus: &Corpus) -> Option<usize> {
    let target = state.target();
    let t = state.test_set.iter().position(|&i| i == target)?;
    let current = state.belief.b[t];
    let truth = corpus.item(target);
    let mut best: Option<(usize, f64)> = None;
    for w in state.unasked_clarifications() {
        let b = grounding::update_belief(&state.belief.b, state.test_probs.column(w), truth.has(w));
        if best.is_none_or(|(_, v)| b[t] > v) {
            best = Some((w, b[t]));
        }
    }
    best.filter(|&(_, v)| v > current).map(|(w, _)| w)
}
