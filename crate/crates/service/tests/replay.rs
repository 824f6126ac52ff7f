//! A scripted client answering truthfully over HTTP must reproduce a pure
//! simulation with the same seed.

mod common;

use std::sync::{Arc, OnceLock};

use axum::http::{Method, StatusCode};
use common::{cached, call, create, shared, static_shared, truthful};
use hdialog::classifier::LabelSource;
use hdialog::env::{ActionKind, Answer, DialogAction, DialogState, TranscriptEntry};
use hdialog::policy::{hierarchical_act, ActingMode, BundleSpec, StaticPolicyConfig};
use hdialog_service::{policy_rng, ActionPayload, AppState, GuessOutcome, Shared, StepResponse};
use serde_json::json;

static STATIC: OnceLock<Arc<Shared>> = OnceLock::new();
static LEARNED: OnceLock<Arc<Shared>> = OnceLock::new();

fn learned() -> Shared {
    shared(BundleSpec::default(), StaticPolicyConfig::default())
}

fn simulate(shared: &Shared, seed: u64) -> (Vec<TranscriptEntry>, GuessOutcome) {
    let setup = shared.setup_for(seed).unwrap();
    let mut state = DialogState::reset(
        &setup,
        &shared.classifier,
        &shared.corpus,
        &shared.reward,
        LabelSource::ActiveLearning,
    )
    .unwrap();
    let mut rng = policy_rng(seed);
    loop {
        let acted = hierarchical_act(
            &shared.bundle,
            &state,
            &shared.context(),
            ActingMode::Evaluation,
            &mut rng,
        )
        .unwrap();
        let answer = match acted.action {
            DialogAction::Guess => state.guess_outcome(),
            DialogAction::ExampleQuery { attribute } => Answer::ExampleResult {
                item: state
                    .train_set
                    .iter()
                    .copied()
                    .find(|&i| shared.corpus.item(i).labels[attribute] == 1),
            },
            DialogAction::Clarify { attribute } => Answer::YesNo {
                value: shared.corpus.item(setup.target).labels[attribute] == 1,
            },
            DialogAction::LabelQuery { attribute, item } => Answer::YesNo {
                value: shared.corpus.item(item).labels[attribute] == 1,
            },
        };
        state.step(acted.action, answer).unwrap();
        if let Answer::GuessOutcome { guessed, correct } = answer {
            return (
                state.transcript,
                GuessOutcome {
                    guessed_item: guessed,
                    correct,
                },
            );
        }
    }
}

async fn scripted(state: &AppState, seed: u64) -> (Vec<TranscriptEntry>, GuessOutcome, usize) {
    let shared = state.shared().unwrap().clone();
    let created = create(state, "simulated", Some(seed)).await;
    let id = created["session_id"].as_str().unwrap();
    let target = created["simulated"]["target_item"].as_u64().unwrap();
    let (status, v) = call(
        state,
        Method::POST,
        &format!("/sessions/{id}/description"),
        Some(json!({"attributes": created["simulated"]["description"]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let mut step: StepResponse = serde_json::from_value(v).unwrap();
    let mut questions = 0;
    while !step.done {
        let (_, v) = call(state, Method::GET, &format!("/sessions/{id}/next"), None).await;
        let pending: ActionPayload = serde_json::from_value(v).unwrap();
        assert_eq!(pending, step.action);
        assert_ne!(pending.kind, ActionKind::Guess);
        let (status, v) = call(
            state,
            Method::POST,
            &format!("/sessions/{id}/answer"),
            Some(json!({"value": truthful(&shared.corpus, target, &pending)})),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        step = serde_json::from_value(v).unwrap();
        questions += 1;
    }
    let (_, v) = call(state, Method::GET, &format!("/sessions/{id}/transcript"), None).await;
    (serde_json::from_value(v).unwrap(), step.outcome.unwrap(), questions)
}

async fn check(state: AppState, seeds: std::ops::Range<u64>) {
    let shared = state.shared().unwrap().clone();
    let mut asked = 0;
    for seed in seeds {
        let (http, outcome, questions) = scripted(&state, seed).await;
        let (direct, expected) = simulate(&shared, seed);
        assert_eq!(http, direct, "seed {seed}");
        assert_eq!(outcome, expected, "seed {seed}");
        assert_eq!(http.len(), questions + 1);
        asked += questions;
    }
    assert!(asked > 0, "every session guessed at once");
}

#[tokio::test]
async fn static_policy_session_matches_simulation() {
    check(cached(&STATIC, static_shared), 0..12).await;
}

#[tokio::test]
async fn learned_policy_session_matches_simulation() {
    check(cached(&LEARNED, learned), 0..12).await;
}
