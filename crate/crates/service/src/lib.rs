//! HTTP + JSON service for live dialog sessions. A human (or a scripted
//! client) plays the user: it describes a target, answers the agent's
//! questions and sees the final guess.

pub mod error;
pub mod session;
pub mod shared;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use hdialog::classifier::{LabelRecord, LabelRole};
use hdialog::corpus::ItemId;
use hdialog::env::TranscriptEntry;
use hdialog::rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use error::{ErrorBody, Result, ServiceError};
pub use session::{policy_rng, ActionPayload, AnswerValue, GuessOutcome, Mode, Session, Status};
pub use shared::{ServiceParts, Shared, EXAMPLES_PER_ATTRIBUTE};

type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

/// Service state. Without [`Shared`] every request answers 503.
#[derive(Clone, Default)]
pub struct AppState {
    shared: Option<Arc<Shared>>,
    sessions: Arc<RwLock<HashMap<String, SessionHandle>>>,
    created: Arc<AtomicU64>,
    buffered: Arc<Mutex<Vec<LabelRecord>>>,
}

impl AppState {
    pub fn new(shared: Shared) -> Self {
        AppState::with_shared(Arc::new(shared))
    }

    /// Several services may read the same snapshot.
    pub fn with_shared(shared: Arc<Shared>) -> Self {
        AppState {
            shared: Some(shared),
            ..AppState::default()
        }
    }

    pub fn uninitialized() -> Self {
        AppState::default()
    }

    pub fn shared(&self) -> Result<&Arc<Shared>> {
        self.shared.as_ref().ok_or(ServiceError::NotInitialized)
    }

    /// Labels collected by finished sessions. They are kept aside and never
    /// touch the live classifier.
    pub fn buffered_labels(&self) -> Vec<LabelRecord> {
        self.buffered.lock().expect("label buffer poisoned").clone()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    fn session(&self, id: &str) -> Result<SessionHandle> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    fn next_seed(&self, shared: &Shared) -> u64 {
        let n = self.created.fetch_add(1, Ordering::Relaxed);
        rng::stream(shared.seed, &[0x5E55, n]).random()
    }

    fn buffer(&self, session: &Session) {
        let records = session.acquired().iter().map(|l| LabelRecord {
            item: l.item,
            attribute: l.attribute,
            value: l.value,
            role: LabelRole::Training,
            source: l.source,
        });
        self.buffered.lock().expect("label buffer poisoned").extend(records);
    }
}

/// Render payload for one item. Derived from the feature vector only, so
/// it never carries ground-truth labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCard {
    pub item_id: ItemId,
    pub render_seed: u64,
    /// Attribute names this item illustrates in the catalog, if any.
    pub chips: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub index: usize,
    pub name: String,
    pub example_item_ids: Vec<ItemId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_mode() -> Mode {
    Mode::Human
}

/// What a simulated client needs to answer truthfully.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedUser {
    pub target_item: ItemId,
    pub description: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ItemCard>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated: Option<SimulatedUser>,
    pub catalog: Vec<CatalogEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DescriptionRequest {
    pub attributes: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub value: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub status: Status,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<GuessOutcome>,
    pub action: ActionPayload,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/description", post(post_description))
        .route("/sessions/{id}/next", get(next_action))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/catalog", get(catalog))
        .route("/items/{id}", get(item))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::Validation(e.body_text()))
}

pub fn item_card(shared: &Shared, id: ItemId) -> Result<ItemCard> {
    let item = shared.corpus.get(id).ok_or(ServiceError::UnknownItem(id))?;
    // FNV-1a over the feature bits keeps the seed stable across builds.
    let render_seed = item
        .features
        .iter()
        .flat_map(|f| f.to_bits().to_le_bytes())
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
    let chips = shared
        .examples
        .iter()
        .enumerate()
        .filter(|(_, ids)| ids.contains(&id))
        .map(|(w, _)| shared.attribute_name(w).to_string())
        .collect();
    Ok(ItemCard {
        item_id: id,
        render_seed,
        chips,
    })
}

pub fn catalog_entries(shared: &Shared) -> Vec<CatalogEntry> {
    shared
        .examples
        .iter()
        .enumerate()
        .map(|(w, ids)| CatalogEntry {
            index: w,
            name: shared.attribute_name(w).to_string(),
            example_item_ids: ids.clone(),
        })
        .collect()
}

async fn create_session(
    State(state): State<AppState>,
    payload: std::result::Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<Json<CreateSessionResponse>> {
    let shared = state.shared()?.clone();
    let req = body(payload)?;
    let seed = req.seed.unwrap_or_else(|| state.next_seed(&shared));
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(id.clone(), req.mode, seed, &shared)?;
    let (target, simulated) = match req.mode {
        Mode::Human => (Some(item_card(&shared, session.target())?), None),
        Mode::Simulated => (
            None,
            Some(SimulatedUser {
                target_item: session.target(),
                description: session.sampled_description().to_vec(),
            }),
        ),
    };
    let response = CreateSessionResponse {
        session_id: id.clone(),
        mode: req.mode,
        seed,
        status: session.status(),
        target,
        simulated,
        catalog: catalog_entries(&shared),
    };
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    log::debug!("created {:?} session {id} with seed {seed}", req.mode);
    Ok(Json(response))
}

async fn post_description(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<DescriptionRequest>, JsonRejection>,
) -> Result<Json<StepResponse>> {
    let shared = state.shared()?.clone();
    let handle = state.session(&id)?;
    let req = body(payload)?;
    let mut session = handle.lock().await;
    let action = session.post_description(&shared, &req.attributes)?;
    Ok(Json(step_response(&state, &session, action)))
}

async fn next_action(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ActionPayload>> {
    let shared = state.shared()?.clone();
    let handle = state.session(&id)?;
    let session = handle.lock().await;
    Ok(Json(session.next_action(&shared)?))
}

async fn post_answer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<AnswerRequest>, JsonRejection>,
) -> Result<Json<StepResponse>> {
    let shared = state.shared()?.clone();
    let handle = state.session(&id)?;
    let req = body(payload)?;
    let value = AnswerValue::parse(&req.value)?;
    let mut session = handle.lock().await;
    session.post_answer(&shared, value)?;
    let action = session.next_action(&shared)?;
    Ok(Json(step_response(&state, &session, action)))
}

/// Buffers the session's labels the moment it finishes.
fn step_response(state: &AppState, session: &Session, action: ActionPayload) -> StepResponse {
    let outcome = session.outcome();
    if outcome.is_some() {
        state.buffer(session);
    }
    StepResponse {
        status: session.status(),
        done: outcome.is_some(),
        outcome,
        action,
    }
}

async fn transcript(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<TranscriptEntry>>> {
    state.shared()?;
    let handle = state.session(&id)?;
    let session = handle.lock().await;
    Ok(Json(session.transcript().to_vec()))
}

async fn catalog(State(state): State<AppState>) -> Result<Json<Vec<CatalogEntry>>> {
    Ok(Json(catalog_entries(state.shared()?)))
}

async fn item(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ItemCard>> {
    let id: ItemId = id
        .parse()
        .map_err(|_| ServiceError::Validation(format!("item id {id:?} is not an integer")))?;
    Ok(Json(item_card(state.shared()?, id)?))
}
