//! Fixed-length feature vectors for the clarification, active-learning and
//! decision sub-policies. Extraction never mutates the dialog state.

use serde::{Deserialize, Serialize};

use crate::classifier::{AttributeStats, LabelStore};
use crate::corpus::{Corpus, ItemId};
use crate::env::{DialogAction, DialogState};
use crate::grounding::{self, belief_summary};

pub const CLARIFICATION_DIM: usize = 20;
pub const ACTIVE_LEARNING_DIM: usize = 8;
pub const DECISION_DIM: usize = 16;
pub const FEATURE_CLAMP: f64 = 10.0;

/// How often each attribute appeared in a description, and how often those
/// dialogs succeeded.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogHistoryStats {
    pub total: u64,
    pub used: Vec<u64>,
    pub successful: Vec<u64>,
}

impl DialogHistoryStats {
    pub fn new(num_attributes: usize) -> Self {
        DialogHistoryStats {
            total: 0,
            used: vec![0; num_attributes],
            successful: vec![0; num_attributes],
        }
    }

    pub fn used_fraction(&self, w: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.used[w] as f64 / self.total as f64
        }
    }

    pub fn success_fraction(&self, w: usize) -> f64 {
        if self.used[w] == 0 {
            0.0
        } else {
            self.successful[w] as f64 / self.used[w] as f64
        }
    }
}

pub fn record_dialog(history: &mut DialogHistoryStats, described: &[usize], success: bool) {
    history.total += 1;
    let mut seen = described.to_vec();
    seen.sort_unstable();
    seen.dedup();
    for w in seen {
        history.used[w] += 1;
        if success {
            history.successful[w] += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Neighbourhood size for the unlabeled-neighbour feature.
    pub k_neighbors: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { k_neighbors: 10 }
    }
}

/// Read-only context shared by every feature extractor during one batch.
#[derive(Clone, Copy)]
pub struct FeatureContext<'a> {
    pub corpus: &'a Corpus,
    pub labels: &'a LabelStore,
    pub stats: &'a AttributeStats,
    pub history: &'a DialogHistoryStats,
    pub config: &'a FeatureConfig,
}

fn clamp_all<const N: usize>(mut v: [f64; N]) -> [f64; N] {
    for x in &mut v {
        *x = if x.is_nan() {
            0.0
        } else {
            x.clamp(-FEATURE_CLAMP, FEATURE_CLAMP)
        };
    }
    v
}

fn summary_normalized(b: &[f64], log_n: f64) -> [f64; 6] {
    let mut s = belief_summary(b).to_array();
    s[0] /= log_n;
    s
}

fn log_size(n: usize) -> f64 {
    if n > 1 {
        (n as f64).ln()
    } else {
        1.0
    }
}

/// Belief summaries now / after "yes" / after "no", then info gain and F1.
/// Entropies are normalised by the log of the belief length.
pub fn clarification_vector(b: &[f64], column: &[f64], f1: f64) -> [f64; CLARIFICATION_DIM] {
    let log_n = log_size(b.len());
    let mut out = [0.0; CLARIFICATION_DIM];
    out[0..6].copy_from_slice(&summary_normalized(b, log_n));
    out[6..12].copy_from_slice(&summary_normalized(&grounding::update_belief(b, column, true), log_n));
    out[12..18].copy_from_slice(&summary_normalized(&grounding::update_belief(b, column, false), log_n));
    out[18] = grounding::info_gain(b, column);
    out[19] = f1;
    clamp_all(out)
}

pub fn clarification_features(state: &DialogState, stats: &AttributeStats, w: usize) -> [f64; CLARIFICATION_DIM] {
    clarification_vector(&state.belief.b, state.test_probs.column(w), stats.f1(w))
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na.sqrt() * nb.sqrt())
    }
}

fn is_unlabeled(state: &DialogState, labels: &LabelStore, item: ItemId, w: usize) -> bool {
    !labels.contains(item, w) && !state.acquired.iter().any(|a| a.item == item && a.attribute == w)
}

/// `(mean cosine distance to the rest of the train set, fraction of the k
/// nearest neighbours unlabeled for w)`.
fn neighbourhood(state: &DialogState, ctx: &FeatureContext<'_>, item: ItemId, w: usize) -> (f64, f64) {
    let x = &ctx.corpus.item(item).features;
    let mut dists: Vec<(f64, ItemId)> = state
        .train_set
        .iter()
        .filter(|&&j| j != item)
        .map(|&j| (cosine_distance(x, &ctx.corpus.item(j).features), j))
        .collect();
    if dists.is_empty() {
        return (0.0, 0.0);
    }
    let mean = dists.iter().map(|d| d.0).sum::<f64>() / dists.len() as f64;
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = ctx.config.k_neighbors.min(dists.len());
    if k == 0 {
        return (mean, 0.0);
    }
    let unlabeled = dists[..k]
        .iter()
        .filter(|&&(_, j)| is_unlabeled(state, ctx.labels, j, w))
        .count();
    (mean, unlabeled as f64 / k as f64)
}

/// F1, description usage, success, opportunism, query type, then margin and
/// neighbourhood statistics for label queries (zero for example queries).
pub fn active_learning_features(
    state: &DialogState,
    ctx: &FeatureContext<'_>,
    action: &DialogAction,
) -> [f64; ACTIVE_LEARNING_DIM] {
    let w = action.attribute().expect("active-learning actions carry an attribute");
    let mut out = [0.0; ACTIVE_LEARNING_DIM];
    out[0] = ctx.stats.f1(w);
    out[1] = ctx.history.used_fraction(w);
    out[2] = ctx.history.success_fraction(w);
    out[3] = if state.description.contains(&w) { 0.0 } else { 1.0 };
    if let DialogAction::LabelQuery { item, .. } = *action {
        out[4] = 1.0;
        let j = state
            .train_set
            .iter()
            .position(|&i| i == item)
            .expect("label query item is in the train set");
        out[5] = (state.train_probs.get(j, w) - 0.5).abs();
        let (mean, unlabeled) = neighbourhood(state, ctx, item, w);
        out[6] = mean;
        out[7] = unlabeled;
    }
    clamp_all(out)
}

/// The clarification the decision policy would ask if it chose to clarify.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClarificationSummary {
    pub attribute: usize,
    pub info_gain: f64,
    pub f1: f64,
}

/// The active-learning query the decision policy would ask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveLearningSummary {
    pub action: DialogAction,
    pub margin: f64,
    pub f1: f64,
}

pub const META_ACTIONS: usize = 3;

/// Decision features for `[guess, clarify, active-learn]`: thirteen shared
/// values followed by a one-hot meta-action indicator.
pub fn decision_features(
    state: &DialogState,
    stats: &AttributeStats,
    clar: Option<&ClarificationSummary>,
    al: Option<&ActiveLearningSummary>,
) -> [[f64; DECISION_DIM]; META_ACTIONS] {
    let mut shared = [0.0; DECISION_DIM - META_ACTIONS];
    shared[0..6].copy_from_slice(&summary_normalized(&state.belief.b, log_size(state.belief.b.len())));
    if let Some(c) = clar {
        shared[6] = c.info_gain;
        shared[7] = c.f1;
    }
    if let Some(a) = al {
        if matches!(a.action, DialogAction::LabelQuery { .. }) {
            shared[8] = 1.0;
            shared[9] = a.margin;
        }
        shared[10] = a.f1;
    }
    shared[11] = stats.mean_f1(&state.description);
    shared[12] = state.turn as f64 / state.reward.max_length as f64;
    let mut out = [[0.0; DECISION_DIM]; META_ACTIONS];
    for (m, row) in out.iter_mut().enumerate() {
        row[..shared.len()].copy_from_slice(&shared);
        row[shared.len() + m] = 1.0;
        *row = clamp_all(*row);
    }
    out
}
