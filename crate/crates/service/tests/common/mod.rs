#![allow(dead_code)]

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use hdialog::corpus::{Corpus, GenConfig, Split};
use hdialog::experiment::{Experiment, ExperimentConfig, PhaseCounts};
use hdialog::policy::{load_checkpoint, save_checkpoint, BundleSpec, PolicyKind, StaticPolicyConfig};
use hdialog_service::{router, ActionPayload, AppState, ServiceParts, Shared};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn experiment(spec: BundleSpec, static_policy: StaticPolicyConfig) -> Experiment {
    let mut cfg = ExperimentConfig {
        generate: GenConfig {
            dim: 24,
            num_attributes: 16,
            item_count: 1200,
            ..GenConfig::default()
        },
        phases: PhaseCounts {
            initialization: 0,
            training: 0,
            testing: 0,
        },
        policy: spec,
        static_policy,
        train_set_size: 40,
        seed: 11,
        ..ExperimentConfig::default()
    };
    cfg.classifier.epochs = 10;
    cfg.learning.hidden = 16;
    let mut exp = Experiment::new(cfg).unwrap();
    exp.pretrain().unwrap();
    exp
}

pub fn parts(exp: Experiment) -> ServiceParts {
    let checkpoint = load_checkpoint(&save_checkpoint(&exp.bundle, &exp.history)).unwrap();
    let cfg = exp.config;
    ServiceParts {
        corpus: exp.corpus,
        splits: exp.splits,
        classifier: exp.classifier,
        labels: exp.labels,
        checkpoint,
        reward: cfg.reward,
        features: cfg.features,
        split: Split::Test,
        candidates: cfg.human_eval_candidates,
        train_set_size: cfg.train_set_size,
        seed: cfg.seed,
    }
}

pub fn shared(spec: BundleSpec, static_policy: StaticPolicyConfig) -> Shared {
    Shared::new(parts(experiment(spec, static_policy))).unwrap()
}

/// Default static bundle: clarifies while it pays, then learns, then guesses.
pub fn static_shared() -> Shared {
    shared(BundleSpec::all_static(), StaticPolicyConfig::default())
}

/// Static bundle that never clarifies and only asks example queries.
pub fn example_query_shared() -> Shared {
    shared(
        BundleSpec::all_static(),
        StaticPolicyConfig {
            k_c: 0,
            p_label: 0.0,
            ..StaticPolicyConfig::default()
        },
    )
}

pub fn oracle_spec() -> BundleSpec {
    BundleSpec {
        clarification: PolicyKind::Oracle,
        ..BundleSpec::all_static()
    }
}

pub async fn call(state: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = router(state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn create(state: &AppState, mode: &str, seed: Option<u64>) -> Value {
    let body = match seed {
        Some(s) => json!({"mode": mode, "seed": s}),
        None => json!({"mode": mode}),
    };
    let (status, v) = call(state, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v
}

/// The answer a truthful user gives to a pending question.
pub fn truthful(corpus: &Corpus, target: u64, action: &ActionPayload) -> Value {
    let w = action.attribute.expect("questions carry an attribute");
    match action.kind {
        hdialog::env::ActionKind::Clarify => json!(corpus.item(target).labels[w] == 1),
        hdialog::env::ActionKind::LabelQuery => json!(corpus.item(action.item.unwrap()).labels[w] == 1),
        hdialog::env::ActionKind::ExampleQuery => action
            .candidate_item_ids
            .iter()
            .find(|&&i| corpus.item(i).labels[w] == 1)
            .map_or(json!("none"), |&i| json!(i)),
        hdialog::env::ActionKind::Guess => unreachable!("guesses take no answer"),
    }
}

use std::sync::{Arc, OnceLock};

/// Pretraining is the slow part, so each fixture is built once per binary.
pub fn cached(cell: &'static OnceLock<Arc<Shared>>, build: fn() -> Shared) -> AppState {
    AppState::with_shared(cell.get_or_init(|| Arc::new(build())).clone())
}
