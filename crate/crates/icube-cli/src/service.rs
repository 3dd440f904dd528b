//! HTTP session service. Each session is an oracle holding one dataset; the
//! client plays explorer through views, suggestions and exclusions. Masked
//! fields are absent from every response body.

use crate::setup::{session_config, UnitSplit};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use icube_core::masking::{MaskingMode, Receipt, Session, ViewSnapshot};
use icube_core::strategy::{build, StrategyKind, StrategySpec};
use icube_core::{rng, Dataset, Error};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub const DEFAULT_PORT: u16 = 8642;

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub max_sessions: usize,
    pub idle_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { max_sessions: 64, idle_timeout: Duration::from_secs(3600) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub mode: MaskingMode,
    pub alpha: f64,
    /// Number of candidate units at open.
    pub n: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub status: Status,
    pub seed: u64,
    pub units: Vec<usize>,
    pub complement: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    /// Dataset CSV text.
    pub data: String,
    pub mode: MaskingMode,
    pub alpha: f64,
    #[serde(flatten)]
    pub split: UnitSplit,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct ExcludeRequest {
    pub unit_id: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SuggestRequest {
    #[serde(default)]
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub unit_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub t: usize,
    pub strategy: StrategyKind,
    /// Candidates in exclusion order: the first entry is the suggested unit.
    pub ranking: Vec<Ranked>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBody {
    pub rejected: Vec<usize>,
    pub t: usize,
    pub fdr_hat: f64,
    pub fdr_hat_trajectory: Vec<f64>,
    pub exclusions: Vec<usize>,
}

struct Entry {
    descriptor: SessionDescriptor,
    session: RwLock<Session>,
    last_used: Mutex<Instant>,
}

impl Entry {
    fn touch(&self) {
        *self.last_used.lock().expect("clock lock") = Instant::now();
    }

    fn descriptor(&self) -> SessionDescriptor {
        let stopped = self.session.read().expect("session lock").ledger().stopped();
        SessionDescriptor { status: if stopped { Status::Stopped } else { Status::Active }, ..self.descriptor.clone() }
    }
}

pub struct AppState {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Entry>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState { config, sessions: Mutex::new(HashMap::new()), counter: AtomicU64::new(0) })
    }

    fn evict_idle(&self, sessions: &mut HashMap<String, Arc<Entry>>) {
        let now = Instant::now();
        sessions.retain(|id, e| {
            let keep = now.duration_since(*e.last_used.lock().expect("clock lock")) < self.config.idle_timeout;
            if !keep {
                log::info!("evicting idle session {id}");
            }
            keep
        });
    }

    fn get(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        let mut sessions = self.sessions.lock().expect("registry lock");
        self.evict_idle(&mut sessions);
        let e = sessions.get(id).cloned().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))?;
        e.touch();
        Ok(e)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) | Error::Parse { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::IllegalState(_) => StatusCode::CONFLICT,
            Error::MaskedRead { .. } | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(describe).delete(remove))
        .route("/sessions/{id}/view", get(view))
        .route("/sessions/{id}/exclude", post(exclude))
        .route("/sessions/{id}/suggest", post(suggest))
        .route("/sessions/{id}/result", get(result))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create(State(state): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    {
        let mut sessions = state.sessions.lock().expect("registry lock");
        state.evict_idle(&mut sessions);
        if sessions.len() >= state.config.max_sessions {
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session limit reached"));
        }
    }
    let seed = req.seed.unwrap_or_else(rand::random);
    let (descriptor, session) = blocking(move || {
        let dataset = Arc::new(Dataset::read_csv(req.data.as_bytes())?);
        let config = session_config(&dataset, req.mode, req.alpha, &req.split, seed)?;
        let session = Session::open(dataset, &config)?;
        Ok((
            SessionDescriptor {
                session_id: String::new(),
                mode: req.mode,
                alpha: req.alpha,
                n: config.units.len(),
                created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                status: if session.ledger().stopped() { Status::Stopped } else { Status::Active },
                seed,
                units: config.units,
                complement: config.complement,
            },
            session,
        ))
    })
    .await?;
    let mut sessions = state.sessions.lock().expect("registry lock");
    if sessions.len() >= state.config.max_sessions {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session limit reached"));
    }
    let k = state.counter.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{k:06x}{:08x}", rand::random::<u32>());
    let descriptor = SessionDescriptor { session_id: id.clone(), ..descriptor };
    let entry = Entry { descriptor: descriptor.clone(), session: RwLock::new(session), last_used: Mutex::new(Instant::now()) };
    sessions.insert(id.clone(), Arc::new(entry));
    log::info!("opened session {id} ({:?}, {} units)", descriptor.mode, descriptor.n);
    Ok((StatusCode::CREATED, Json(descriptor)))
}

async fn describe(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionDescriptor> {
    Ok(Json(state.get(&id)?.descriptor()))
}

async fn view(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ViewSnapshot> {
    let e = state.get(&id)?;
    let snapshot = e.session.read().expect("session lock").view().snapshot();
    Ok(Json(snapshot))
}

async fn exclude(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(req): Json<ExcludeRequest>) -> ApiResult<Receipt> {
    let e = state.get(&id)?;
    let receipt = e.session.write().expect("session lock").exclude(req.unit_id)?;
    Ok(Json(receipt))
}

async fn suggest(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Option<Json<SuggestRequest>>) -> ApiResult<Suggestion> {
    let e = state.get(&id)?;
    let req = body.map(|b| b.0).unwrap_or_default();
    blocking(move || {
        let session = e.session.read().expect("session lock");
        if session.ledger().stopped() {
            return Err(Error::IllegalState("session has stopped".into()).into());
        }
        let mode = session.mode();
        let kind = match req.strategy {
            Some(s) => StrategyKind::parse(&s)?,
            None => StrategyKind::default_for(mode),
        };
        let mut strategy = build(&StrategySpec::new(kind, rng::derive(e.descriptor.seed, rng::STRATEGY)), mode)?;
        let view = session.view();
        let mut ranking: Vec<Ranked> = strategy.scores(&view)?.into_iter().map(|(unit_id, score)| Ranked { unit_id, score }).collect();
        ranking.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.unit_id.cmp(&b.unit_id)));
        Ok(Suggestion { t: view.t(), strategy: kind, ranking })
    })
    .await
    .map(Json)
}

async fn result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ResultBody> {
    let e = state.get(&id)?;
    let session = e.session.read().expect("session lock");
    let ledger = session.ledger();
    Ok(Json(ResultBody {
        rejected: session.rejection_set()?,
        t: ledger.t(),
        fdr_hat: ledger.fdr_hat(),
        fdr_hat_trajectory: ledger.trajectory().to_vec(),
        exclusions: ledger.exclusions().to_vec(),
    }))
}

async fn remove(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let removed = state.sessions.lock().expect("registry lock").remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"))),
    }
}

/// Serves until interrupted.
pub async fn serve(addr: std::net::SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
