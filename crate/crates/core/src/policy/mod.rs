//! Hierarchical dialog policy: a clarification sub-policy and an
//! active-learning sub-policy each propose their best query, and a decision
//! sub-policy picks between guessing and the two proposals.

mod actor;
mod qnet;
mod static_policy;

pub use actor::{a3c_select, a3c_update, advantage, state_value, Actor, ActorCritic};
pub use qnet::{argmax, q_select, q_target, q_update, QGradient, QNet, Transition, DEFAULT_HIDDEN};
pub use static_policy::{
    oracle_clarification, pick_active_learning, pick_clarification, static_active_learning, static_clarification,
    static_decision, StaticPolicyConfig,
};

use serde::{Deserialize, Serialize};

use crate::env::{DialogAction, DialogState};
use crate::error::{Error, Result};
use crate::features::{
    self, ActiveLearningSummary, ClarificationSummary, DialogHistoryStats, FeatureContext, ACTIVE_LEARNING_DIM,
    CLARIFICATION_DIM, DECISION_DIM,
};
use crate::grounding;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaAction {
    Guess,
    Clarify,
    ActiveLearning,
}

impl MetaAction {
    pub const ALL: [MetaAction; 3] = [MetaAction::Guess, MetaAction::Clarify, MetaAction::ActiveLearning];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Static,
    Oracle,
    Q,
    A3c,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleSpec {
    pub clarification: PolicyKind,
    pub active_learning: PolicyKind,
    pub decision: PolicyKind,
}

impl Default for BundleSpec {
    fn default() -> Self {
        BundleSpec {
            clarification: PolicyKind::Q,
            active_learning: PolicyKind::Q,
            decision: PolicyKind::Q,
        }
    }
}

impl BundleSpec {
    pub fn all_static() -> Self {
        BundleSpec {
            clarification: PolicyKind::Static,
            active_learning: PolicyKind::Static,
            decision: PolicyKind::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_learning == PolicyKind::Oracle || self.decision == PolicyKind::Oracle {
            return Err(Error::Config(
                "only the clarification sub-policy has an oracle variant".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub hidden: usize,
    pub q_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub actor_step: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            hidden: DEFAULT_HIDDEN,
            q_learning_rate: 0.001,
            critic_learning_rate: 0.001,
            actor_step: 0.01,
            epsilon: 0.1,
            gamma: 1.0,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden layer must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config("epsilon must lie in [0, 1]".into()));
        }
        if ![
            self.q_learning_rate,
            self.critic_learning_rate,
            self.actor_step,
            self.gamma,
        ]
        .iter()
        .all(|x| x.is_finite() && *x >= 0.0)
        {
            return Err(Error::Config(
                "learning rates and gamma must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubPolicy {
    Static,
    Oracle,
    Q(QNet),
    A3c(ActorCritic),
}

impl SubPolicy {
    fn build(kind: PolicyKind, input_dim: usize, learning: &LearningConfig, seed: u64) -> Self {
        match kind {
            PolicyKind::Static => SubPolicy::Static,
            PolicyKind::Oracle => SubPolicy::Oracle,
            PolicyKind::Q => SubPolicy::Q(QNet::new(input_dim, learning.hidden, seed)),
            PolicyKind::A3c => SubPolicy::A3c(ActorCritic {
                actor: Actor::new(input_dim, learning.actor_step),
                critic: QNet::new(input_dim, learning.hidden, seed),
            }),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            SubPolicy::Static => PolicyKind::Static,
            SubPolicy::Oracle => PolicyKind::Oracle,
            SubPolicy::Q(_) => PolicyKind::Q,
            SubPolicy::A3c(_) => PolicyKind::A3c,
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, SubPolicy::Q(_) | SubPolicy::A3c(_))
    }

    fn select(&self, candidates: &[Vec<f64>], mode: ActingMode, epsilon: f64, rng: &mut Rng) -> Result<usize> {
        match self {
            SubPolicy::Q(net) => {
                let eps = if mode == ActingMode::Training { epsilon } else { 0.0 };
                q_select(net, candidates, eps, rng)
            }
            SubPolicy::A3c(ac) => a3c_select(&ac.actor, candidates, mode == ActingMode::Training, rng),
            _ => unreachable!("select is only called on learned sub-policies"),
        }
    }

    fn train(&mut self, transitions: &[Transition], learning: &LearningConfig) -> Result<()> {
        match self {
            SubPolicy::Q(net) => q_update(net, transitions, learning.gamma, learning.q_learning_rate),
            SubPolicy::A3c(ac) => transitions
                .iter()
                .try_for_each(|t| a3c_update(ac, t, learning.gamma, learning.critic_learning_rate)),
            _ => Ok(()),
        }
    }
}

/// Initialization runs the oracle/static behaviour policy while logging
/// features for the learners; training explores; evaluation is greedy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActingMode {
    Initialization,
    Training,
    Evaluation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub clarification: SubPolicy,
    pub active_learning: SubPolicy,
    pub decision: SubPolicy,
    pub static_config: StaticPolicyConfig,
    pub learning: LearningConfig,
}

impl PolicyBundle {
    pub fn new(
        spec: &BundleSpec,
        static_config: StaticPolicyConfig,
        learning: LearningConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        static_config.validate()?;
        learning.validate()?;
        Ok(PolicyBundle {
            clarification: SubPolicy::build(spec.clarification, CLARIFICATION_DIM, &learning, seed ^ 0xC1),
            active_learning: SubPolicy::build(spec.active_learning, ACTIVE_LEARNING_DIM, &learning, seed ^ 0xA1),
            decision: SubPolicy::build(spec.decision, DECISION_DIM, &learning, seed ^ 0xD1),
            static_config,
            learning,
        })
    }

    pub fn spec(&self) -> BundleSpec {
        BundleSpec {
            clarification: self.clarification.kind(),
            active_learning: self.active_learning.kind(),
            decision: self.decision.kind(),
        }
    }

    pub fn has_oracle(&self) -> bool {
        self.clarification.kind() == PolicyKind::Oracle
    }
}

/// Candidate features one sub-policy saw on a turn and the index it proposed.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub candidates: Vec<Vec<f64>>,
    pub chosen: Option<usize>,
}

/// Per-turn attribution: which meta-action ran, plus the logged choices of
/// every learned sub-policy.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TurnRecord {
    pub meta: Option<MetaAction>,
    pub clarification: Option<Choice>,
    pub active_learning: Option<Choice>,
    pub decision: Option<Choice>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Acted {
    pub action: DialogAction,
    pub meta: MetaAction,
    pub record: TurnRecord,
}

fn to_rows<const N: usize>(rows: impl IntoIterator<Item = [f64; N]>) -> Vec<Vec<f64>> {
    rows.into_iter().map(|r| r.to_vec()).collect()
}

/// Chooses the next dialog action.
pub fn hierarchical_act(
    bundle: &PolicyBundle,
    state: &DialogState,
    ctx: &FeatureContext<'_>,
    mode: ActingMode,
    rng: &mut Rng,
) -> Result<Acted> {
    if state.done {
        return Err(Error::Episode("episode is finished".into()));
    }
    if bundle.has_oracle() && mode != ActingMode::Initialization {
        return Err(Error::Config(
            "oracle clarification is only available during initialization".into(),
        ));
    }
    let behave = mode == ActingMode::Initialization;
    let eps = bundle.learning.epsilon;
    let at_limit = state.at_turn_limit();
    let mut record = TurnRecord::default();

    let clar_pool = if at_limit {
        Vec::new()
    } else {
        state.unasked_clarifications()
    };
    let clar_rows = bundle.clarification.is_learned().then(|| {
        to_rows(
            clar_pool
                .iter()
                .map(|&w| features::clarification_features(state, ctx.stats, w)),
        )
    });
    let clar_w = if clar_pool.is_empty() {
        None
    } else if behave || bundle.clarification.kind() == PolicyKind::Oracle {
        oracle_clarification(state, ctx.corpus)
    } else if let Some(rows) = &clar_rows {
        Some(clar_pool[bundle.clarification.select(rows, mode, eps, rng)?])
    } else {
        static_clarification(state, ctx.stats)
    };
    if let Some(rows) = clar_rows {
        if !rows.is_empty() {
            let chosen = clar_w.and_then(|w| clar_pool.iter().position(|&c| c == w));
            record.clarification = Some(Choice {
                candidates: rows,
                chosen,
            });
        }
    }
    let best_clar = clar_w.map(|w| ClarificationSummary {
        attribute: w,
        info_gain: grounding::info_gain(&state.belief.b, state.test_probs.column(w)),
        f1: ctx.stats.f1(w),
    });

    let al_pool = if at_limit {
        Vec::new()
    } else {
        state.active_learning_candidates()
    };
    let al_rows = bundle.active_learning.is_learned().then(|| {
        to_rows(
            al_pool
                .iter()
                .map(|a| features::active_learning_features(state, ctx, a)),
        )
    });
    let al_action = if al_pool.is_empty() {
        None
    } else if behave || !bundle.active_learning.is_learned() {
        static_active_learning(state, &bundle.static_config, rng)
    } else {
        let rows = al_rows.as_ref().expect("learned sub-policy has features");
        Some(al_pool[bundle.active_learning.select(rows, mode, eps, rng)?])
    };
    if let Some(rows) = al_rows {
        if !rows.is_empty() {
            let chosen = al_action.and_then(|a| al_pool.iter().position(|&c| c == a));
            record.active_learning = Some(Choice {
                candidates: rows,
                chosen,
            });
        }
    }
    let best_al = al_action.map(|action| {
        let (margin, f1) = match action {
            DialogAction::LabelQuery { attribute, item } => {
                let j = state.train_set.iter().position(|&i| i == item).expect("train item");
                (
                    (state.train_probs.get(j, attribute) - 0.5).abs(),
                    ctx.stats.f1(attribute),
                )
            }
            other => (0.0, ctx.stats.f1(other.attribute().expect("query attribute"))),
        };
        ActiveLearningSummary { action, margin, f1 }
    });

    let mut available = vec![MetaAction::Guess];
    if best_clar.is_some() {
        available.push(MetaAction::Clarify);
    }
    if best_al.is_some() {
        available.push(MetaAction::ActiveLearning);
    }
    let meta = if behave || !bundle.decision.is_learned() {
        static_decision(state, &bundle.static_config, best_clar.as_ref(), best_al.as_ref())
    } else {
        let all = features::decision_features(state, ctx.stats, best_clar.as_ref(), best_al.as_ref());
        let rows = available.iter().map(|m| all[*m as usize].to_vec()).collect::<Vec<_>>();
        available[bundle.decision.select(&rows, mode, eps, rng)?]
    };
    if bundle.decision.is_learned() {
        let all = features::decision_features(state, ctx.stats, best_clar.as_ref(), best_al.as_ref());
        let rows = available.iter().map(|m| all[*m as usize].to_vec()).collect();
        let chosen = available.iter().position(|&m| m == meta);
        record.decision = Some(Choice {
            candidates: rows,
            chosen,
        });
    }
    record.meta = Some(meta);
    let action = match meta {
        MetaAction::Guess => DialogAction::Guess,
        MetaAction::Clarify => DialogAction::Clarify {
            attribute: best_clar.expect("clarify is only available with a proposal").attribute,
        },
        MetaAction::ActiveLearning => {
            best_al
                .expect("active learning is only available with a proposal")
                .action
        }
    };
    Ok(Acted { action, meta, record })
}

/// Turn records and per-step rewards of one finished episode.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeTrace<'a> {
    pub records: &'a [TurnRecord],
    pub rewards: &'a [f64],
}

/// Splits an episode into transitions for one sub-policy: each spans from
/// one of its executed decisions to the next, with the rewards in between
/// summed.
pub fn segment(
    trace: &EpisodeTrace<'_>,
    acted: impl Fn(&TurnRecord) -> bool,
    choice: impl Fn(&TurnRecord) -> Option<&Choice>,
) -> Result<Vec<Transition>> {
    let n = trace.records.len();
    if trace.rewards.len() != n {
        return Err(Error::Episode(format!(
            "{} turn records but {} rewards",
            n,
            trace.rewards.len()
        )));
    }
    let turns: Vec<usize> = (0..n).filter(|&t| acted(&trace.records[t])).collect();
    let mut out = Vec::with_capacity(turns.len());
    for (k, &t) in turns.iter().enumerate() {
        let missing = || Error::Episode(format!("turn {t} lacks logged features"));
        let c = choice(&trace.records[t]).ok_or_else(missing)?;
        let chosen = c.chosen.ok_or_else(missing)?;
        let end = turns.get(k + 1).copied().unwrap_or(n);
        let next = match turns.get(k + 1) {
            Some(&t2) => Some(choice(&trace.records[t2]).ok_or_else(missing)?.candidates.clone()),
            None => None,
        };
        out.push(Transition {
            candidates: c.candidates.clone(),
            chosen,
            reward: trace.rewards[t..end].iter().sum(),
            next,
        });
    }
    Ok(out)
}

/// Updates every learned sub-policy on its own transitions, episodes in order.
pub fn train_from_batch(bundle: &mut PolicyBundle, traces: &[EpisodeTrace<'_>]) -> Result<()> {
    let learning = bundle.learning.clone();
    let collect = |acted: &dyn Fn(&TurnRecord) -> bool, choice: &dyn Fn(&TurnRecord) -> Option<&Choice>| {
        let mut all = Vec::new();
        for tr in traces {
            all.extend(segment(tr, acted, choice)?);
        }
        Ok::<_, Error>(all)
    };
    if bundle.clarification.is_learned() {
        let ts = collect(&|r| r.meta == Some(MetaAction::Clarify), &|r| r.clarification.as_ref())?;
        bundle.clarification.train(&ts, &learning)?;
    }
    if bundle.active_learning.is_learned() {
        let ts = collect(&|r| r.meta == Some(MetaAction::ActiveLearning), &|r| {
            r.active_learning.as_ref()
        })?;
        bundle.active_learning.train(&ts, &learning)?;
    }
    if bundle.decision.is_learned() {
        let ts = collect(&|_| true, &|r| r.decision.as_ref())?;
        bundle.decision.train(&ts, &learning)?;
    }
    Ok(())
}

pub const CHECKPOINT_FORMAT: &str = "hdialog-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub bundle: PolicyBundle,
    pub history: DialogHistoryStats,
}

pub fn save_checkpoint(bundle: &PolicyBundle, history: &DialogHistoryStats) -> Vec<u8> {
    serde_json::to_vec(&PolicyCheckpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        bundle: bundle.clone(),
        history: history.clone(),
    })
    .expect("policy checkpoint serialises")
}

pub fn load_checkpoint(blob: &[u8]) -> Result<PolicyCheckpoint> {
    let c: PolicyCheckpoint = serde_json::from_slice(blob).map_err(|e| Error::Snapshot(e.to_string()))?;
    if c.format != CHECKPOINT_FORMAT {
        return Err(Error::Snapshot(format!("unexpected format tag {:?}", c.format)));
    }
    if c.version != CHECKPOINT_VERSION {
        return Err(Error::Snapshot(format!(
            "version {} not supported (expected {CHECKPOINT_VERSION})",
            c.version
        )));
    }
    let dims_ok = |p: &SubPolicy, dim: usize| match p {
        SubPolicy::Q(n) => n.input_dim == dim && n.w1.len() == n.hidden * dim && n.is_finite(),
        SubPolicy::A3c(ac) => {
            ac.actor.theta.len() == dim && ac.critic.input_dim == dim && ac.critic.w1.len() == ac.critic.hidden * dim
        }
        _ => true,
    };
    if !(dims_ok(&c.bundle.clarification, CLARIFICATION_DIM)
        && dims_ok(&c.bundle.active_learning, ACTIVE_LEARNING_DIM)
        && dims_ok(&c.bundle.decision, DECISION_DIM))
    {
        return Err(Error::Snapshot(
            "sub-policy shapes do not match the feature sets".into(),
        ));
    }
    c.bundle.spec().validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(n: usize, chosen: usize) -> Choice {
        Choice {
            candidates: (0..n).map(|i| vec![i as f64]).collect(),
            chosen: Some(chosen),
        }
    }

    #[test]
    fn segmentation_two_clarifications_then_guess() {
        // clarify, label query, clarify, guess (correct)
        let metas = [
            MetaAction::Clarify,
            MetaAction::ActiveLearning,
            MetaAction::Clarify,
            MetaAction::Guess,
        ];
        let records: Vec<TurnRecord> = metas
            .iter()
            .enumerate()
            .map(|(t, &m)| TurnRecord {
                meta: Some(m),
                clarification: Some(choice(4 - t, 0)),
                ..TurnRecord::default()
            })
            .collect();
        let rewards = [-1.0, -1.0, -1.0, 20.0];
        let trace = EpisodeTrace {
            records: &records,
            rewards: &rewards,
        };
        let ts = segment(
            &trace,
            |r| r.meta == Some(MetaAction::Clarify),
            |r| r.clarification.as_ref(),
        )
        .unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].reward, -2.0);
        assert_eq!(ts[0].next.as_ref().unwrap().len(), 2);
        assert_eq!(ts[1].reward, 19.0);
        assert!(ts[1].next.is_none());
        let ds = segment(&trace, |_| true, |r| r.clarification.as_ref()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.iter().map(|t| t.reward).sum::<f64>(), 17.0);
    }

    #[test]
    fn malformed_traces_are_rejected() {
        let records = vec![TurnRecord {
            meta: Some(MetaAction::Guess),
            ..TurnRecord::default()
        }];
        let trace = EpisodeTrace {
            records: &records,
            rewards: &[],
        };
        assert!(segment(&trace, |_| true, |r| r.decision.as_ref()).is_err());
        let trace = EpisodeTrace {
            records: &records,
            rewards: &[20.0],
        };
        assert!(segment(&trace, |_| true, |r| r.decision.as_ref()).is_err());
    }

    #[test]
    fn static_and_empty_batches_leave_bundle_unchanged() {
        let mut b = PolicyBundle::new(
            &BundleSpec::default(),
            StaticPolicyConfig::default(),
            LearningConfig::default(),
            3,
        )
        .unwrap();
        let before = b.clone();
        train_from_batch(&mut b, &[]).unwrap();
        assert_eq!(b, before);
        let mut s = PolicyBundle::new(
            &BundleSpec::all_static(),
            StaticPolicyConfig::default(),
            LearningConfig::default(),
            3,
        )
        .unwrap();
        let before = s.clone();
        let records = vec![TurnRecord {
            meta: Some(MetaAction::Guess),
            ..TurnRecord::default()
        }];
        train_from_batch(
            &mut s,
            &[EpisodeTrace {
                records: &records,
                rewards: &[20.0],
            }],
        )
        .unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = BundleSpec {
            clarification: PolicyKind::A3c,
            active_learning: PolicyKind::Static,
            decision: PolicyKind::Q,
        };
        let b = PolicyBundle::new(&spec, StaticPolicyConfig::default(), LearningConfig::default(), 5).unwrap();
        let mut h = DialogHistoryStats::new(4);
        features::record_dialog(&mut h, &[1, 2], true);
        let c = load_checkpoint(&save_checkpoint(&b, &h)).unwrap();
        assert_eq!(c.bundle, b);
        assert_eq!(c.history, h);
        let text = String::from_utf8(save_checkpoint(&b, &h)).unwrap();
        assert!(load_checkpoint(text.replace("hdialog-policy", "other").as_bytes()).is_err());
        assert!(load_checkpoint(&text.as_bytes()[..40]).is_err());
    }

    #[test]
    fn oracle_only_for_clarification() {
        let spec = BundleSpec {
            decision: PolicyKind::Oracle,
            ..BundleSpec::all_static()
        };
        assert!(PolicyBundle::new(&spec, StaticPolicyConfig::default(), LearningConfig::default(), 0).is_err());
    }
}
