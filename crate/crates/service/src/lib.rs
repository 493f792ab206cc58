//! HTTP facade over monitored runs: create runs, answer choices, inspect
//! violations and ranked recovery plans, execute a plan, follow the event log.

mod fixtures;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Mutex};

pub use fixtures::{FixtureListing, FixtureSet};
pub use session::{
    ChoiceView, Event, Mode, MonitorView, Phase, PlanListing, PlanView, Session, SessionError,
    SessionView,
};

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub capacity: usize,
    pub idle_timeout: Duration,
    /// Upper bound on how long an events request may wait.
    pub max_poll: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            capacity: 64,
            idle_timeout: Duration::from_secs(30 * 60),
            max_poll: Duration::from_secs(30),
        }
    }
}

/// Error body sent with every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub status: u16,
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not-found", what)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::WrongPhase(_) => (StatusCode::CONFLICT, "wrong-phase"),
            SessionError::InvalidChoice(_) => (StatusCode::BAD_REQUEST, "invalid-choice"),
            SessionError::UnknownPlan(_) => (StatusCode::NOT_FOUND, "unknown-plan"),
            SessionError::Engine(_) => (StatusCode::UNPROCESSABLE_ENTITY, "engine-error"),
            SessionError::Plan(_) => (StatusCode::UNPROCESSABLE_ENTITY, "planning-error"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Problem {
            status: self.status.as_u16(),
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct SessionHandle {
    session: Arc<Mutex<Session>>,
    /// Latest view and event log, readable without waiting on mutations.
    view: RwLock<SessionView>,
    log: RwLock<Vec<Event>>,
    changed: watch::Sender<usize>,
    last_used: std::sync::Mutex<Instant>,
}

impl SessionHandle {
    fn publish(&self, s: &Session) {
        *self.view.write().unwrap() = s.view();
        let events = s.events();
        let mut log = self.log.write().unwrap();
        let seen = log.len();
        if seen < events.len() {
            log.extend_from_slice(&events[seen..]);
        }
        self.changed.send_replace(log.len());
    }

    fn touch(&self) {
        *self.last_used.lock().unwrap() = Instant::now();
    }
}

/// Shared service state.
pub struct AppState {
    fixtures: FixtureSet,
    config: ServiceConfig,
    sessions: RwLock<HashMap<u64, Arc<SessionHandle>>>,
    next_id: std::sync::atomic::AtomicU64,
}

impl AppState {
    pub fn new(fixtures: FixtureSet, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            fixtures,
            config,
            sessions: RwLock::new(HashMap::new()),
            next_id: std::sync::atomic::AtomicU64::new(1),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    /// Drop sessions idle for longer than the configured timeout.
    pub fn evict_idle(&self) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.write().unwrap();
        let before = sessions.len();
        sessions.retain(|_, h| {
            now.duration_since(*h.last_used.lock().unwrap()) < self.config.idle_timeout
        });
        before - sessions.len()
    }

    fn handle(&self, id: u64) -> Result<Arc<SessionHandle>, ApiError> {
        let h = self
            .sessions
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no run {id}")))?;
        h.touch();
        Ok(h)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/fixtures", get(list_fixtures))
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/choices/{choice}", post(answer_choice))
        .route("/runs/{id}/inject-ter", post(inject_ter))
        .route("/runs/{id}/violation", get(get_violation))
        .route("/runs/{id}/plans", get(get_plans))
        .route("/runs/{id}/plans/{plan}/execute", post(execute_plan))
        .route("/runs/{id}/events", get(get_events))
        .with_state(state)
}

/// Bind and serve until the process is stopped, evicting idle sessions in
/// the background.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.evict_idle();
        }
    });
    axum::serve(listener, router(state)).await
}

async fn list_fixtures(State(state): State<Arc<AppState>>) -> Json<FixtureListing> {
    Json(state.fixtures.listing())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateRun {
    pub workflow: String,
    pub properties: String,
    #[serde(default = "interactive")]
    pub mode: Mode,
    pub scenario: Option<String>,
}

fn interactive() -> Mode {
    Mode::Interactive
}

async fn create_run(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateRun>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let model = state
        .fixtures
        .model(&req.workflow, &req.properties)
        .ok_or_else(|| {
            ApiError::not_found(format!(
                "unknown fixture {}/{}",
                req.workflow, req.properties
            ))
        })?
        .map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "fixture-error",
                e.to_string(),
            )
        })?;
    let scenario_text = match (req.mode, &req.scenario) {
        (Mode::Scenario, Some(name)) => Some(
            state
                .fixtures
                .scenarios
                .get(name)
                .ok_or_else(|| ApiError::not_found(format!("unknown scenario {name}")))?
                .clone(),
        ),
        (Mode::Scenario, None) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "missing-scenario",
                "scenario mode needs a scenario name",
            ))
        }
        (Mode::Interactive, _) => None,
    };
    state.evict_idle();
    if state.session_count() >= state.config.capacity {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "capacity",
            format!("at most {} concurrent runs", state.config.capacity),
        ));
    }
    let id = state
        .next_id
        .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let (workflow, properties, mode) = (req.workflow.clone(), req.properties.clone(), req.mode);
    let session = tokio::task::spawn_blocking(move || {
        Session::start(
            id,
            &workflow,
            &properties,
            model,
            mode,
            scenario_text.as_deref(),
        )
    })
    .await
    .expect("session start does not panic")?;
    let view = session.view();
    let handle = Arc::new(SessionHandle {
        view: RwLock::new(view.clone()),
        log: RwLock::new(session.events().to_vec()),
        changed: watch::channel(session.events().len()).0,
        session: Arc::new(Mutex::new(session)),
        last_used: std::sync::Mutex::new(Instant::now()),
    });
    state.sessions.write().unwrap().insert(id, handle);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_run(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> ApiResult<SessionView> {
    let h = state.handle(id)?;
    let view = h.view.read().unwrap().clone();
    Ok(Json(view))
}

/// Run a mutation on the session off the async workers, then publish.
async fn mutate<T: Send + 'static>(
    h: Arc<SessionHandle>,
    f: impl FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
) -> Result<T, ApiError> {
    let guard = h.session.clone().lock_owned().await;
    let handle = h.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = guard;
        let out = f(&mut guard);
        handle.publish(&guard);
        out
    })
    .await
    .expect("session mutation does not panic")
    .map_err(ApiError::from)
}

async fn answer_choice(
    State(state): State<Arc<AppState>>,
    Path((id, choice)): Path<(u64, String)>,
) -> ApiResult<SessionView> {
    let h = state.handle(id)?;
    mutate(h, move |s| {
        s.answer(&choice)?;
        Ok(s.view())
    })
    .await
    .map(Json)
}

async fn inject_ter(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> ApiResult<SessionView> {
    let h = state.handle(id)?;
    mutate(h, |s| {
        s.inject_ter()?;
        Ok(s.view())
    })
    .await
    .map(Json)
}

async fn get_violation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> ApiResult<compass_core::engine::ViolationReport> {
    let h = state.handle(id)?;
    let view = h.view.read().unwrap().clone();
    match (view.phase, view.violation) {
        (Phase::Violated, Some(v)) => Ok(Json(v)),
        (phase, _) => Err(SessionError::WrongPhase(phase).into()),
    }
}

#[derive(Debug, Deserialize)]
pub struct PlanQuery {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub relevant: bool,
    #[serde(default)]
    pub filter: bool,
}

fn default_k() -> usize {
    30
}

async fn get_plans(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Query(q): Query<PlanQuery>,
) -> ApiResult<PlanListing> {
    let h = state.handle(id)?;
    mutate(h, move |s| s.plans(q.k, q.relevant, q.filter))
        .await
        .map(Json)
}

async fn execute_plan(
    State(state): State<Arc<AppState>>,
    Path((id, plan)): Path<(u64, String)>,
) -> ApiResult<SessionView> {
    let h = state.handle(id)?;
    mutate(h, move |s| {
        s.execute(&plan)?;
        Ok(s.view())
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventQuery {
    #[serde(default)]
    pub cursor: usize,
    /// Milliseconds to wait for new events when none are past the cursor.
    #[serde(default)]
    pub wait_ms: u64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EventPage {
    pub events: Vec<Event>,
    pub next_cursor: usize,
    pub phase: Phase,
}

async fn get_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Query(q): Query<EventQuery>,
) -> ApiResult<EventPage> {
    let h = state.handle(id)?;
    let mut rx = h.changed.subscribe();
    let wait = Duration::from_millis(q.wait_ms).min(state.config.max_poll);
    if *rx.borrow_and_update() <= q.cursor && !wait.is_zero() {
        let _ = tokio::time::timeout(wait, rx.wait_for(|n| *n > q.cursor)).await;
    }
    let log = h.log.read().unwrap();
    let events: Vec<Event> = log.iter().skip(q.cursor).cloned().collect();
    let next_cursor = log.len().max(q.cursor);
    let phase = h.view.read().unwrap().phase;
    Ok(Json(EventPage {
        events,
        next_cursor,
        phase,
    }))
}
