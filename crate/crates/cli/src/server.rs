//! JSON API consumed by the console.
//!
//! Pipeline work is blocking (SQLite, and the HTTP provider's blocking
//! client), so every handler hands it to `spawn_blocking`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hisql_core::db::extract_ddl;
use hisql_core::hints::{curate_hints, write_hint_set, CurationError, HistoryEntry};
use hisql_core::pipeline::{answer, PipelineError};
use hisql_core::{AttemptOutcome, CallLedger, HintSet, LedgerSnapshot, NLQuery, VerificationOutcome};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::app::App;

/// Rows returned by `/api/query`, independent of the execution row cap.
pub const DISPLAY_ROW_CAP: usize = 500;

#[derive(Clone)]
pub struct ServerState {
    pub app: Arc<App>,
    next_query: Arc<AtomicU64>,
}

impl ServerState {
    pub fn new(app: Arc<App>) -> Self {
        Self { app, next_query: Arc::new(AtomicU64::new(1)) }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(db_id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown database {db_id:?}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed request body: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatabaseSummary {
    pub db_id: String,
    pub table_count: usize,
    pub has_hints: bool,
}

async fn list_databases(State(s): State<ServerState>) -> ApiResult<Json<Vec<DatabaseSummary>>> {
    blocking(move || {
        let mut out = Vec::new();
        for (id, db) in &s.app.databases {
            let schema = extract_ddl(&db.profile).map_err(ApiError::internal)?;
            out.push(DatabaseSummary {
                db_id: id.clone(),
                table_count: schema.table_count(),
                has_hints: db.hints_path.is_file(),
            });
        }
        Ok(Json(out))
    })
    .await
}

async fn get_schema(State(s): State<ServerState>, Path(db_id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let db = s.app.database(&db_id).ok_or_else(|| ApiError::not_found(&db_id))?;
        let schema = extract_ddl(&db.profile).map_err(ApiError::internal)?;
        Ok(Json(schema).into_response())
    })
    .await
}

async fn get_hints(State(s): State<ServerState>, Path(db_id): Path<String>) -> ApiResult<Json<HintSet>> {
    blocking(move || {
        let db = s.app.database(&db_id).ok_or_else(|| ApiError::not_found(&db_id))?;
        match db.load_hints().map_err(|e| ApiError::internal(format!("{e:#}")))? {
            Some(set) => Ok(Json(set)),
            None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no hints for {db_id} yet"))),
        }
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurateBody {
    history: Vec<HistoryEntry>,
}

async fn curate(State(s): State<ServerState>, Path(db_id): Path<String>, body: Bytes) -> ApiResult<Json<HintSet>> {
    let db = s.app.database(&db_id).ok_or_else(|| ApiError::not_found(&db_id))?.clone();
    let req: CurateBody = parse_body(&body)?;
    let guard = s.app.locks.try_acquire(&db_id).ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, format!("curation for {db_id} is already in progress"))
    })?;
    blocking(move || {
        let _guard = guard;
        let ledger = CallLedger::new();
        let set = curate_hints(&s.app.llm, &db.profile, &req.history, &s.app.config.pipeline, &ledger).map_err(|e| {
            let status = match e {
                CurationError::EmptyHistory | CurationError::EmptyHistorySql(_) => StatusCode::UNPROCESSABLE_ENTITY,
                CurationError::Schema(_) | CurationError::Prompt(_) | CurationError::NotRepairable(_) => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
                CurationError::Provider(_) | CurationError::Unparseable { .. } | CurationError::EmptyResult => {
                    StatusCode::BAD_GATEWAY
                }
            };
            ApiError::new(status, e.to_string())
        })?;
        write_hint_set(&db.hints_path, &set).map_err(ApiError::internal)?;
        log::info!("curated {} hints for {db_id}: {}", set.kept_len(), crate::commands::format_ledger(&ledger.snapshot()));
        Ok(Json(set))
    })
    .await
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    db_id: String,
    question: String,
    #[serde(default = "default_true")]
    use_hints: bool,
    #[serde(default)]
    evidence: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AttemptView {
    pub index: u32,
    pub sql: String,
    /// `success` or `exec_error`.
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    /// `success` or `exhausted`.
    pub outcome: String,
    pub final_sql: String,
    pub attempts: Vec<AttemptView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<Value>>>,
    /// Set when rows were cut, either at the display cap or at execution.
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    pub hints_used: usize,
    pub ledger_delta: LedgerSnapshot,
}

async fn query(State(s): State<ServerState>, body: Bytes) -> ApiResult<Json<QueryResponse>> {
    let req: QueryBody = parse_body(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "question must not be empty"));
    }
    let db = s.app.database(&req.db_id).ok_or_else(|| ApiError::not_found(&req.db_id))?.clone();
    let id = format!("api-{}", s.next_query.fetch_add(1, Ordering::Relaxed));
    blocking(move || {
        let hints = if req.use_hints {
            db.load_hints().map_err(|e| ApiError::internal(format!("{e:#}")))?
        } else {
            None
        }
        .unwrap_or_else(|| HintSet::empty(req.db_id.clone()));
        let q = NLQuery { id, db_id: req.db_id, question: req.question, evidence: req.evidence };
        let ledger = CallLedger::new();
        let rec = answer(&s.app.llm, &db.profile, &hints, &q, &s.app.config.pipeline, &ledger, &s.app.failure_log)
            .map_err(|e| match e {
                PipelineError::Provider(_) => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
                other => ApiError::internal(other),
            })?;
        let attempts = rec
            .attempts()
            .iter()
            .map(|a| {
                let (outcome, error) = match &a.outcome {
                    AttemptOutcome::Success => ("success", None),
                    AttemptOutcome::ExecError { message } => ("exec_error", Some(message.clone())),
                };
                AttemptView { index: a.index, sql: a.sql.clone(), outcome: outcome.into(), error }
            })
            .collect();
        let mut resp = QueryResponse {
            outcome: String::new(),
            final_sql: rec.final_sql.clone(),
            attempts,
            columns: None,
            rows: None,
            truncated: false,
            last_error: None,
            hints_used: hints.kept_len(),
            ledger_delta: ledger.snapshot(),
        };
        match rec.outcome {
            VerificationOutcome::Success { result, .. } => {
                resp.outcome = "success".into();
                resp.truncated = result.truncated || result.rows.len() > DISPLAY_ROW_CAP;
                resp.rows = Some(
                    result
                        .rows
                        .iter()
                        .take(DISPLAY_ROW_CAP)
                        .map(|r| r.iter().map(|c| c.to_json()).collect())
                        .collect(),
                );
                resp.columns = Some(result.columns);
            }
            VerificationOutcome::Exhausted { last_error, .. } => {
                resp.outcome = "exhausted".into();
                resp.last_error = Some(last_error);
            }
        }
        Ok(Json(resp))
    })
    .await
}

pub fn router(state: ServerState) -> Router {
    let ui_dir = state.app.config.ui_dir.clone();
    let api = Router::new()
        .route("/api/databases", get(list_databases))
        .route("/api/databases/{id}/schema", get(get_schema))
        .route("/api/databases/{id}/hints", get(get_hints))
        .route("/api/databases/{id}/hints/curate", post(curate))
        .route("/api/query", post(query))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}

/// Serves until SIGINT or SIGTERM.
pub async fn serve(state: ServerState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown_signal()).await?;
    Ok(())
}
