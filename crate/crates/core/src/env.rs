//! The dialog MDP: state, legal actions, simulated answers, transitions and
//! rewards.

use std::collections::HashSet;
use std::fmt;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierParams, LabelSource};
use crate::corpus::{Corpus, ItemId};
use crate::error::{Error, Result};
use crate::grounding::{self, BeliefState, ProbTable};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DialogAction {
    Guess,
    Clarify { attribute: usize },
    LabelQuery { attribute: usize, item: ItemId },
    ExampleQuery { attribute: usize },
}

impl DialogAction {
    pub fn attribute(&self) -> Option<usize> {
        match *self {
            DialogAction::Guess => None,
            DialogAction::Clarify { attribute }
            | DialogAction::LabelQuery { attribute, .. }
            | DialogAction::ExampleQuery { attribute } => Some(attribute),
        }
    }

    pub fn is_query(&self) -> bool {
        !matches!(self, DialogAction::Guess)
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            DialogAction::Guess => ActionKind::Guess,
            DialogAction::Clarify { .. } => ActionKind::Clarify,
            DialogAction::LabelQuery { .. } => ActionKind::LabelQuery,
            DialogAction::ExampleQuery { .. } => ActionKind::ExampleQuery,
        }
    }
}

impl fmt::Display for DialogAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DialogAction::Guess => write!(f, "guess"),
            DialogAction::Clarify { attribute } => write!(f, "clarify({attribute})"),
            DialogAction::LabelQuery { attribute, item } => write!(f, "label_query({attribute}, {item})"),
            DialogAction::ExampleQuery { attribute } => write!(f, "example_query({attribute})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Guess,
    Clarify,
    LabelQuery,
    ExampleQuery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Answer {
    YesNo { value: bool },
    ExampleResult { item: Option<ItemId> },
    GuessOutcome { guessed: ItemId, correct: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub success: f64,
    pub failure: f64,
    pub query: f64,
    pub max_length: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            success: 20.0,
            failure: -20.0,
            query: -1.0,
            max_length: 20,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.success > 0.0 && self.query < 0.0) {
            return Err(Error::Config("rewards need success > 0 > query".into()));
        }
        if self.max_length < 1 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquiredLabel {
    pub item: ItemId,
    pub attribute: usize,
    pub value: u8,
    pub source: LabelSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn: usize,
    pub action: DialogAction,
    pub answer: Answer,
    pub reward: f64,
}

/// Target, description and the active test/train sets for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSetup {
    pub target: ItemId,
    pub description: Vec<usize>,
    pub test_set: Vec<ItemId>,
    pub train_set: Vec<ItemId>,
}

#[derive(Clone, Debug)]
pub struct DialogState {
    target: ItemId,
    pub description: Vec<usize>,
    pub test_set: Vec<ItemId>,
    pub train_set: Vec<ItemId>,
    pub test_probs: ProbTable,
    pub train_probs: ProbTable,
    pub belief: BeliefState,
    pub initial_belief: Vec<f64>,
    pub turn: usize,
    pub clarifications: usize,
    pub acquired: Vec<AcquiredLabel>,
    pub transcript: Vec<TranscriptEntry>,
    pub done: bool,
    pub reward: RewardConfig,
    pub label_source: LabelSource,
    asked: HashSet<DialogAction>,
    asked_label_items: Vec<HashSet<usize>>,
}

impl DialogState {
    pub fn reset(
        setup: &EpisodeSetup,
        classifier: &ClassifierParams,
        corpus: &Corpus,
        reward: &RewardConfig,
        label_source: LabelSource,
    ) -> Result<Self> {
        if setup.description.is_empty() {
            return Err(Error::Episode("description must be non-empty".into()));
        }
        if !setup.test_set.contains(&setup.target) {
            return Err(Error::Episode(format!(
                "target {} is not in the active test set",
                setup.target
            )));
        }
        let k = corpus.num_attributes();
        if let Some(&w) = setup.description.iter().find(|&&w| w >= k) {
            return Err(Error::Episode(format!("description attribute {w} out of range")));
        }
        let probs = |ids: &[ItemId]| -> Result<ProbTable> {
            let mut rows = Vec::with_capacity(ids.len());
            for &id in ids {
                let item = corpus
                    .get(id)
                    .ok_or_else(|| Error::Episode(format!("unknown item {id}")))?;
                rows.push(classifier.probabilities(&item.features)?);
            }
            Ok(ProbTable::from_rows(&rows, k))
        };
        let test_probs = probs(&setup.test_set)?;
        let train_probs = probs(&setup.train_set)?;
        let belief = BeliefState::new(&test_probs, &setup.description)?;
        Ok(DialogState {
            target: setup.target,
            description: setup.description.clone(),
            test_set: setup.test_set.clone(),
            train_set: setup.train_set.clone(),
            test_probs,
            train_probs,
            initial_belief: belief.b.clone(),
            belief,
            turn: 0,
            clarifications: 0,
            acquired: Vec::new(),
            transcript: Vec::new(),
            done: false,
            reward: reward.clone(),
            label_source,
            asked: HashSet::new(),
            asked_label_items: vec![HashSet::new(); k],
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.asked_label_items.len()
    }

    /// The hidden target. Only simulators and oracles may look at it.
    pub fn target(&self) -> ItemId {
        self.target
    }

    pub fn was_asked(&self, action: &DialogAction) -> bool {
        self.asked.contains(action)
    }

    pub fn at_turn_limit(&self) -> bool {
        self.turn >= self.reward.max_length
    }

    /// Current guess as an item id.
    pub fn current_guess(&self) -> ItemId {
        self.test_set[grounding::guess(&self.belief.b)]
    }

    /// Index into the train set of the unasked label-query candidate for `w`
    /// whose probability is closest to 0.5 (ties: lowest index).
    pub fn label_candidate(&self, w: usize) -> Option<usize> {
        let asked = &self.asked_label_items[w];
        let mut best: Option<(usize, f64)> = None;
        for (j, &p) in self.train_probs.column(w).iter().enumerate() {
            if asked.contains(&j) {
                continue;
            }
            let m = (p - 0.5).abs();
            if best.is_none_or(|(_, bm)| m < bm) {
                best = Some((j, m));
            }
        }
        best.map(|(j, _)| j)
    }

    pub fn unasked_clarifications(&self) -> Vec<usize> {
        (0..self.num_attributes())
            .filter(|&w| !self.asked.contains(&DialogAction::Clarify { attribute: w }))
            .collect()
    }

    /// Unasked example queries and the reduced label query per attribute.
    pub fn active_learning_candidates(&self) -> Vec<DialogAction> {
        let k = self.num_attributes();
        let mut out = Vec::with_capacity(2 * k);
        for w in 0..k {
            let a = DialogAction::ExampleQuery { attribute: w };
            if !self.asked.contains(&a) {
                out.push(a);
            }
        }
        for w in 0..k {
            if let Some(j) = self.label_candidate(w) {
                out.push(DialogAction::LabelQuery {
                    attribute: w,
                    item: self.train_set[j],
                });
            }
        }
        out
    }

    pub fn legal_actions(&self) -> Vec<DialogAction> {
        if self.done {
            return Vec::new();
        }
        let mut out = vec![DialogAction::Guess];
        if self.at_turn_limit() {
            return out;
        }
        out.extend(
            self.unasked_clarifications()
                .into_iter()
                .map(|attribute| DialogAction::Clarify { attribute }),
        );
        out.extend(self.active_learning_candidates());
        out
    }

    /// Whether `action` is in the full (unreduced) action space right now.
    pub fn is_legal(&self, action: &DialogAction) -> std::result::Result<(), String> {
        if self.done {
            return Err("episode is finished".into());
        }
        if let Some(w) = action.attribute() {
            if w >= self.num_attributes() {
                return Err(format!("attribute {w} out of range"));
            }
        }
        if action.is_query() && self.at_turn_limit() {
            return Err("dialog length limit reached; only guessing is allowed".into());
        }
        if self.asked.contains(action) {
            return Err("action was already taken".into());
        }
        if let DialogAction::LabelQuery { item, .. } = action {
            if !self.train_set.contains(item) {
                return Err(format!("item {item} is not in the active training set"));
            }
        }
        Ok(())
    }

    /// Applies an answered action. Returns `(reward, done)`.
    pub fn step(&mut self, action: DialogAction, answer: Answer) -> Result<(f64, bool)> {
        self.is_legal(&action).map_err(|reason| Error::IllegalAction {
            action: action.to_string(),
            reason,
        })?;
        let mismatch = || Error::IllegalAction {
            action: action.to_string(),
            reason: format!("answer {answer:?} does not fit the action"),
        };
        let reward = match (action, answer) {
            (DialogAction::Guess, Answer::GuessOutcome { correct, .. }) => {
                self.done = true;
                if correct {
                    self.reward.success
                } else {
                    self.reward.failure
                }
            }
            (DialogAction::Clarify { attribute }, Answer::YesNo { value }) => {
                self.belief.apply(&self.test_probs, attribute, value);
                self.clarifications += 1;
                self.reward.query
            }
            (DialogAction::LabelQuery { attribute, item }, Answer::YesNo { value }) => {
                let j = self.train_set.iter().position(|&i| i == item).expect("checked legal");
                self.asked_label_items[attribute].insert(j);
                self.acquired.push(AcquiredLabel {
                    item,
                    attribute,
                    value: value as u8,
                    source: self.label_source,
                });
                self.reward.query
            }
            (DialogAction::ExampleQuery { attribute }, Answer::ExampleResult { item }) => {
                if let Some(item) = item {
                    if !self.train_set.contains(&item) {
                        return Err(Error::IllegalAction {
                            action: action.to_string(),
                            reason: format!("example {item} is not in the active training set"),
                        });
                    }
                    self.acquired.push(AcquiredLabel {
                        item,
                        attribute,
                        value: 1,
                        source: self.label_source,
                    });
                }
                self.reward.query
            }
            _ => return Err(mismatch()),
        };
        self.asked.insert(action);
        self.transcript.push(TranscriptEntry {
            turn: self.turn,
            action,
            answer,
            reward,
        });
        self.turn += 1;
        Ok((reward, self.done))
    }

    /// Outcome of guessing now, judged against the true target.
    pub fn guess_outcome(&self) -> Answer {
        let guessed = self.current_guess();
        Answer::GuessOutcome {
            guessed,
            correct: guessed == self.target,
        }
    }

    /// Whether guessing from the description-only belief would have succeeded.
    pub fn counterfactual_success(&self) -> bool {
        self.test_set[grounding::guess(&self.initial_belief)] == self.target
    }
}

/// Answers a query from ground-truth labels.
pub fn simulate_answer(state: &DialogState, action: &DialogAction, corpus: &Corpus, rng: &mut Rng) -> Answer {
    match *action {
        DialogAction::Guess => state.guess_outcome(),
        DialogAction::Clarify { attribute } => Answer::YesNo {
            value: corpus.item(state.target).has(attribute),
        },
        DialogAction::LabelQuery { attribute, item } => Answer::YesNo {
            value: corpus.item(item).has(attribute),
        },
        DialogAction::ExampleQuery { attribute } => {
            let positives: Vec<ItemId> = state
                .train_set
                .iter()
                .copied()
                .filter(|&i| corpus.item(i).has(attribute))
                .collect();
            Answer::ExampleResult {
                item: positives.choose(rng).copied(),
            }
        }
    }
}

/// Undiscounted return of a finished transcript.
pub fn episode_return(transcript: &[TranscriptEntry]) -> Result<f64> {
    match transcript.last() {
        Some(e) if e.action == DialogAction::Guess => Ok(transcript.iter().map(|e| e.reward).sum()),
        _ => Err(Error::Episode("transcript does not end with a guess".into())),
    }
}
