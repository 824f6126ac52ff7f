//! One live dialog. Sessions move forward only: awaiting a description,
//! then awaiting answers, then finished.

use std::time::{SystemTime, UNIX_EPOCH};

use hdialog::classifier::LabelSource;
use hdialog::corpus::ItemId;
use hdialog::env::{AcquiredLabel, ActionKind, Answer, DialogAction, DialogState, EpisodeSetup, TranscriptEntry};
use hdialog::policy::{hierarchical_act, ActingMode};
use hdialog::rng::{self, Rng};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::shared::Shared;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulated,
    Human,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingDescription,
    AwaitingAnswer,
    Finished,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::AwaitingDescription => "awaiting_description",
            Status::AwaitingAnswer => "awaiting_answer",
            Status::Finished => "finished",
        }
    }
}

/// What the agent wants from the user, or the final guess.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionPayload {
    #[serde(rename = "type")]
    pub kind: ActionKind,
    pub turn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_name: Option<String>,
    /// Subject of a label query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<ItemId>,
    #[serde(default)]
    pub example_item_ids: Vec<ItemId>,
    /// Items an example query may be answered with.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidate_item_ids: Vec<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guessed_item: Option<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuessOutcome {
    pub guessed_item: ItemId,
    pub correct: bool,
}

/// A typed user answer: yes/no, an example item, or "none".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnswerValue {
    YesNo(bool),
    Example(Option<ItemId>),
}

impl AnswerValue {
    /// Accepts `"yes"`, `"no"`, booleans, an item id, `"none"` or `null`.
    pub fn parse(v: &serde_json::Value) -> Result<Self> {
        use serde_json::Value;
        match v {
            Value::Bool(b) => Ok(AnswerValue::YesNo(*b)),
            Value::String(s) => match s.to_ascii_lowercase().as_str() {
                "yes" => Ok(AnswerValue::YesNo(true)),
                "no" => Ok(AnswerValue::YesNo(false)),
                "none" => Ok(AnswerValue::Example(None)),
                other => Err(ServiceError::Validation(format!("unrecognised answer {other:?}"))),
            },
            Value::Number(n) => n
                .as_u64()
                .map(|id| AnswerValue::Example(Some(id)))
                .ok_or_else(|| ServiceError::Validation(format!("item id must be a non-negative integer, got {n}"))),
            Value::Null => Ok(AnswerValue::Example(None)),
            _ => Err(ServiceError::Validation(
                "answer value must be yes, no, an item id or none".into(),
            )),
        }
    }
}

pub struct Session {
    pub id: String,
    pub mode: Mode,
    pub seed: u64,
    pub created_at: u64,
    status: Status,
    setup: EpisodeSetup,
    state: Option<DialogState>,
    pending: Option<DialogAction>,
    policy_rng: Rng,
}

/// Stream the agent draws from in a session with this seed.
pub fn policy_rng(seed: u64) -> Rng {
    rng::stream(seed, &[0x5E5, 1])
}

impl Session {
    pub fn new(id: String, mode: Mode, seed: u64, shared: &Shared) -> Result<Self> {
        let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Session {
            id,
            mode,
            seed,
            created_at,
            status: Status::AwaitingDescription,
            setup: shared.setup_for(seed)?,
            state: None,
            pending: None,
            policy_rng: policy_rng(seed),
        })
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn target(&self) -> ItemId {
        self.setup.target
    }

    /// The description sampled for the target; simulated users send it back.
    pub fn sampled_description(&self) -> &[usize] {
        &self.setup.description
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        self.state.as_ref().map_or(&[], |s| &s.transcript)
    }

    pub fn acquired(&self) -> &[AcquiredLabel] {
        self.state.as_ref().map_or(&[], |s| &s.acquired)
    }

    pub fn post_description(&mut self, shared: &Shared, attributes: &[usize]) -> Result<ActionPayload> {
        self.expect(Status::AwaitingDescription)?;
        if attributes.is_empty() {
            return Err(ServiceError::Validation(
                "description must name at least one attribute".into(),
            ));
        }
        let k = shared.corpus.num_attributes();
        if let Some(w) = attributes.iter().find(|&&w| w >= k) {
            return Err(ServiceError::Validation(format!("attribute {w} out of range (0..{k})")));
        }
        let mut description = attributes.to_vec();
        description.sort_unstable();
        description.dedup();
        let setup = EpisodeSetup {
            description,
            ..self.setup.clone()
        };
        let source = match self.mode {
            Mode::Human => LabelSource::Human,
            Mode::Simulated => LabelSource::ActiveLearning,
        };
        self.state = Some(DialogState::reset(
            &setup,
            &shared.classifier,
            &shared.corpus,
            &shared.reward,
            source,
        )?);
        self.setup = setup;
        self.advance(shared)?;
        self.next_action(shared)
    }

    pub fn next_action(&self, shared: &Shared) -> Result<ActionPayload> {
        let state = match (&self.state, self.status) {
            (Some(s), Status::AwaitingAnswer | Status::Finished) => s,
            _ => return Err(self.wrong_status("awaiting_answer or finished")),
        };
        if self.status == Status::Finished {
            let (guessed, correct) = match state.transcript.last().map(|e| e.answer) {
                Some(Answer::GuessOutcome { guessed, correct }) => (guessed, correct),
                _ => return Err(hdialog::Error::Episode("finished session without a guess".into()).into()),
            };
            return Ok(ActionPayload {
                kind: ActionKind::Guess,
                turn: state.turn - 1,
                attribute: None,
                attribute_name: None,
                item: None,
                example_item_ids: Vec::new(),
                candidate_item_ids: Vec::new(),
                guessed_item: Some(guessed),
                correct: Some(correct),
            });
        }
        let action = self.pending.expect("awaiting_answer always has a pending action");
        let w = action.attribute().expect("pending actions are queries");
        Ok(ActionPayload {
            kind: action.kind(),
            turn: state.turn,
            attribute: Some(w),
            attribute_name: Some(shared.attribute_name(w).to_string()),
            item: match action {
                DialogAction::LabelQuery { item, .. } => Some(item),
                _ => None,
            },
            example_item_ids: shared.examples[w].clone(),
            candidate_item_ids: match action {
                DialogAction::ExampleQuery { .. } => state.train_set.clone(),
                _ => Vec::new(),
            },
            guessed_item: None,
            correct: None,
        })
    }

    /// Steps the dialog with the user's answer and computes the agent's next
    /// move. Returns the guess outcome once the agent has guessed.
    pub fn post_answer(&mut self, shared: &Shared, value: AnswerValue) -> Result<Option<GuessOutcome>> {
        if self.status == Status::Finished {
            return Err(ServiceError::Finished);
        }
        self.expect(Status::AwaitingAnswer)?;
        let action = self.pending.expect("awaiting_answer always has a pending action");
        let answer = match (action, value) {
            (DialogAction::Clarify { .. } | DialogAction::LabelQuery { .. }, AnswerValue::YesNo(value)) => {
                Answer::YesNo { value }
            }
            (DialogAction::ExampleQuery { .. }, AnswerValue::Example(item)) => Answer::ExampleResult { item },
            _ => return Err(ServiceError::TypeMismatch(action.kind_name().into())),
        };
        let state = self.state.as_mut().expect("awaiting_answer has a dialog");
        if let Answer::ExampleResult { item: Some(item) } = answer {
            if !state.train_set.contains(&item) {
                return Err(ServiceError::Validation(format!(
                    "item {item} is not one of the candidate examples"
                )));
            }
        }
        state.step(action, answer)?;
        self.pending = None;
        self.advance(shared)?;
        Ok(self.outcome())
    }

    pub fn outcome(&self) -> Option<GuessOutcome> {
        match self.state.as_ref()?.transcript.last()?.answer {
            Answer::GuessOutcome { guessed, correct } => Some(GuessOutcome {
                guessed_item: guessed,
                correct,
            }),
            _ => None,
        }
    }

    /// Lets the frozen policy pick the next action. A guess is judged at
    /// once and finishes the session; anything else becomes pending.
    fn advance(&mut self, shared: &Shared) -> Result<()> {
        let state = self.state.as_mut().expect("advance needs a dialog");
        let acted = hierarchical_act(
            &shared.bundle,
            state,
            &shared.context(),
            ActingMode::Evaluation,
            &mut self.policy_rng,
        )?;
        if acted.action == DialogAction::Guess {
            let outcome = state.guess_outcome();
            state.step(DialogAction::Guess, outcome)?;
            self.status = Status::Finished;
        } else {
            self.pending = Some(acted.action);
            self.status = Status::AwaitingAnswer;
        }
        Ok(())
    }

    fn expect(&self, status: Status) -> Result<()> {
        if self.status == status {
            Ok(())
        } else {
            Err(self.wrong_status(status.name()))
        }
    }

    fn wrong_status(&self, expected: &'static str) -> ServiceError {
        ServiceError::WrongStatus {
            expected,
            actual: self.status.name(),
        }
    }
}

trait KindName {
    fn kind_name(&self) -> &'static str;
}

impl KindName for DialogAction {
    fn kind_name(&self) -> &'static str {
        match self.kind() {
            ActionKind::Guess => "guess",
            ActionKind::Clarify => "clarify",
            ActionKind::LabelQuery => "label_query",
            ActionKind::ExampleQuery => "example_query",
        }
    }
}
