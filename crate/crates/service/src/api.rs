//! HTTP routes and shared service state.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biopsim::anatomy::SectorLabel;
use biopsim::case::{list_cases, CaseBundle, CaseSummary, ClinicalInfo};
use biopsim::scoring::{ExtendedWeights, MappingFeedback};
use biopsim::session::{
    default_checklist, AssistanceFlags, Cohort, ProcedureRecord, SessionStore, StartPayload, UserProfile, UserRegistry,
};
use biopsim::stats::{study_report, StudyReport};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::live::{BiopsyAck, DeclareAck, LiveError, LiveProcedure, LiveStatus};
use crate::socket::stream;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub cases_dir: PathBuf,
    pub sessions_dir: PathBuf,
    pub weights: ExtendedWeights,
}

/// A live procedure plus the bookkeeping its socket needs.
pub struct LiveSlot {
    pub procedure: Mutex<LiveProcedure>,
    started: Instant,
    /// Incremented by each socket connect; older sockets close when it moves.
    pub socket_generation: watch::Sender<u64>,
}

impl LiveSlot {
    /// Milliseconds since the procedure started.
    pub fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, LiveProcedure> {
        self.procedure.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct AppState {
    cases: BTreeMap<String, Arc<CaseBundle>>,
    case_summaries: Vec<CaseSummary>,
    store: SessionStore,
    users: Mutex<UserRegistry>,
    procedures: Mutex<HashMap<String, Arc<LiveSlot>>>,
    counter: AtomicU64,
    weights: ExtendedWeights,
}

impl AppState {
    /// Loads every case under `cases_dir` and the user registry.
    pub fn load(config: &ServiceConfig) -> biopsim::Result<Self> {
        let case_summaries = list_cases(&config.cases_dir)?;
        let mut cases = BTreeMap::new();
        for s in &case_summaries {
            cases.insert(s.id.clone(), Arc::new(CaseBundle::load(&s.dir)?));
        }
        let store = SessionStore::new(&config.sessions_dir);
        let users = UserRegistry::load(&store.users_path())?;
        Ok(Self {
            cases,
            case_summaries,
            store,
            users: Mutex::new(users),
            procedures: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
            weights: config.weights,
        })
    }

    pub fn slot(&self, id: &str) -> Result<Arc<LiveSlot>, ApiError> {
        self.procedures
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("procedure '{id}'")))
    }

    fn new_procedure_id(&self) -> String {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("p{ms:x}-{n:04}")
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/users", get(list_users).post(create_user))
        .route("/api/cases", get(list_case_summaries))
        .route("/api/procedures", get(list_procedures).post(create_procedure))
        .route("/api/procedures/{id}", get(procedure_status))
        .route("/api/procedures/{id}/checklist", post(check_item))
        .route("/api/procedures/{id}/assistance", post(set_assistance))
        .route("/api/procedures/{id}/biopsy", post(submit_biopsy))
        .route("/api/procedures/{id}/declare", post(declare))
        .route("/api/procedures/{id}/finish", post(finish))
        .route("/api/procedures/{id}/abandon", post(abandon))
        .route("/api/procedures/{id}/feedback", get(feedback))
        .route("/api/procedures/{id}/stream", get(stream))
        .route("/api/stats/cohort", get(cohort_stats))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl From<LiveError> for ApiError {
    fn from(e: LiveError) -> Self {
        let status = match &e {
            LiveError::WrongState { .. }
            | LiveError::ChecklistIncomplete(_)
            | LiveError::TooManyCores
            | LiveError::Incomplete(_) => StatusCode::CONFLICT,
            LiveError::UnknownChecklistItem(_) => StatusCode::BAD_REQUEST,
            LiveError::Engine(_) | LiveError::Frame(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<biopsim::Error> for ApiError {
    fn from(e: biopsim::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn list_users(State(s): State<Arc<AppState>>) -> ApiResult<Vec<UserProfile>> {
    Ok(Json(s.users.lock().unwrap().users().to_vec()))
}

async fn create_user(
    State(s): State<Arc<AppState>>,
    Json(user): Json<UserProfile>,
) -> Result<(StatusCode, Json<UserProfile>), ApiError> {
    if user.id.trim().is_empty() || user.id.contains(['/', '\\']) || user.id.starts_with('.') {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("invalid user id '{}'", user.id)));
    }
    let mut users = s.users.lock().unwrap();
    if users.get(&user.id).is_some() {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("user '{}' already exists", user.id)));
    }
    let mut next = users.clone();
    next.add(user.clone())?;
    next.save(&s.store.users_path())?;
    *users = next;
    Ok((StatusCode::CREATED, Json(user)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseListing {
    pub id: String,
    pub metadata: ClinicalInfo,
}

async fn list_case_summaries(State(s): State<Arc<AppState>>) -> ApiResult<Vec<CaseListing>> {
    Ok(Json(
        s.case_summaries
            .iter()
            .map(|c| CaseListing {
                id: c.id.clone(),
                metadata: c.metadata.clone(),
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateProcedure {
    pub user_id: String,
    pub case_id: String,
    #[serde(default)]
    pub assistance: AssistanceFlags,
}

async fn create_procedure(
    State(s): State<Arc<AppState>>,
    Json(req): Json<CreateProcedure>,
) -> Result<(StatusCode, Json<LiveStatus>), ApiError> {
    if s.users.lock().unwrap().get(&req.user_id).is_none() {
        return Err(ApiError::not_found(format!("user '{}'", req.user_id)));
    }
    let case = s
        .cases
        .get(&req.case_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("case '{}'", req.case_id)))?;
    let procedure_id = s.new_procedure_id();
    let start = StartPayload {
        procedure_id: procedure_id.clone(),
        user_id: req.user_id.clone(),
        case_id: req.case_id,
        checklist: default_checklist(),
        assistance: req.assistance,
    };
    let path = s.store.procedure_path(&req.user_id, &procedure_id);
    let live = LiveProcedure::start(case, start, &path, s.weights, 0)?;
    let status = live.status();
    let slot = Arc::new(LiveSlot {
        procedure: Mutex::new(live),
        started: Instant::now(),
        socket_generation: watch::channel(0).0,
    });
    s.procedures.lock().unwrap().insert(procedure_id, slot);
    Ok((StatusCode::CREATED, Json(status)))
}

async fn list_procedures(State(s): State<Arc<AppState>>) -> ApiResult<Vec<LiveStatus>> {
    let slots: Vec<Arc<LiveSlot>> = s.procedures.lock().unwrap().values().cloned().collect();
    let mut out: Vec<LiveStatus> = slots.iter().map(|slot| slot.lock().status()).collect();
    out.sort_by(|a, b| a.procedure_id.cmp(&b.procedure_id));
    Ok(Json(out))
}

async fn procedure_status(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<LiveStatus> {
    Ok(Json(s.slot(&id)?.lock().status()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub item: String,
    #[serde(default = "yes")]
    pub done: bool,
}

fn yes() -> bool {
    true
}

async fn check_item(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<CheckItem>,
) -> ApiResult<LiveStatus> {
    let slot = s.slot(&id)?;
    let t = slot.now_ms();
    let status = slot.lock().check_item(&req.item, req.done, t)?;
    Ok(Json(status))
}

async fn set_assistance(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(flags): Json<AssistanceFlags>,
) -> ApiResult<LiveStatus> {
    let slot = s.slot(&id)?;
    let t = slot.now_ms();
    let status = slot.lock().set_assistance(flags, t)?;
    Ok(Json(status))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiopsyRequest {
    #[serde(default)]
    pub declared_target: Option<SectorLabel>,
}

async fn submit_biopsy(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<BiopsyRequest>>,
) -> ApiResult<BiopsyAck> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let slot = s.slot(&id)?;
    let t = slot.now_ms();
    let ack = slot.lock().submit_biopsy(req.declared_target, t)?;
    Ok(Json(ack))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclareRequest {
    pub target: SectorLabel,
}

async fn declare(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<DeclareRequest>,
) -> ApiResult<DeclareAck> {
    let slot = s.slot(&id)?;
    let t = slot.now_ms();
    let ack = slot.lock().declare(req.target, t)?;
    Ok(Json(ack))
}

async fn finish(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<MappingFeedback> {
    let slot = s.slot(&id)?;
    let t = slot.now_ms();
    let fb = slot.lock().finish(t)?;
    Ok(Json(fb))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbandonRequest {
    #[serde(default)]
    pub reason: String,
}

async fn abandon(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<AbandonRequest>>,
) -> ApiResult<LiveStatus> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let slot = s.slot(&id)?;
    let t = slot.now_ms();
    let status = slot.lock().abandon(&req.reason, t)?;
    Ok(Json(status))
}

async fn feedback(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<MappingFeedback> {
    let slot = s.slot(&id)?;
    let live = slot.lock();
    live.feedback().cloned().map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            format!("procedure '{id}' is not finished; feedback is shown only at the end"),
        )
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsQuery {
    #[serde(default)]
    pub cohort: Option<Cohort>,
}

/// Read-only snapshot of every procedure log on disk.
async fn cohort_stats(State(s): State<Arc<AppState>>, Query(q): Query<StatsQuery>) -> ApiResult<StudyReport> {
    let state = s.clone();
    let report = tokio::task::spawn_blocking(move || -> biopsim::Result<StudyReport> {
        // A log being written concurrently may fail to parse; list it as
        // excluded rather than failing the whole report.
        let mut procedures = Vec::new();
        let mut unreadable = Vec::new();
        for path in state.store.procedure_paths()? {
            match ProcedureRecord::load(&path) {
                Ok(p) => procedures.push(p),
                Err(e) => unreadable.push(format!("{}: {e}", path.display())),
            }
        }
        let users = state.users.lock().unwrap().clone();
        let mut report = study_report(&procedures, &users, q.cohort);
        report.excluded.extend(unreadable);
        Ok(report)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(report))
}
