//! HTTP backend for reviewing QC predictions: paged volume lists, slice
//! images, live metrics at any threshold, label overrides and fine-tune set
//! export.
//!
//! The threshold is a per-request query parameter, so readers never contend
//! on policy state. Overrides go through a single write lock and are fsync'd
//! to the journal before the response is sent.

mod render;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qcnet_core::qc::{QcError, ThresholdPolicy};
use qcnet_core::trainer::TrainError;
use qcnet_core::{Label, VolumeIoError};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

pub use render::{load_volume, slice_gray, slice_png, window};
pub use session::{
    parse_journal, replay, ExportOutcome, ExportRequest, JournalEvent, ReviewSession, SessionMetrics, SortOrder, VolumeRow, JOURNAL_FILE,
};

pub const DEFAULT_PER_PAGE: usize = 50;
pub const MAX_PER_PAGE: usize = 1000;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },

    #[error("unknown volume id {0:?}")]
    UnknownId(String),

    #[error("no labels or overrides available")]
    NoLabels,

    #[error("nothing to export")]
    NothingToExport,

    #[error(transparent)]
    Volume(#[from] VolumeIoError),

    #[error(transparent)]
    Qc(#[from] QcError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ReviewError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReviewError + '_ {
        move |source| ReviewError::Io { path: path.to_path_buf(), source }
    }
}

/// JSON error body with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::UnknownId(_) => StatusCode::NOT_FOUND,
            ReviewError::NoLabels | ReviewError::NothingToExport => StatusCode::CONFLICT,
            ReviewError::Qc(_) | ReviewError::Train(TrainError::InvalidFraction(_)) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Slices are rendered from volumes preprocessed to these dims, i.e. what
    /// the model saw. `None` renders the raw volume.
    pub display_dims: Option<[usize; 3]>,
    /// Built UI assets, served for every path outside `/api`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct AppState {
    session: Arc<RwLock<ReviewSession>>,
    options: Arc<ServerOptions>,
}

impl AppState {
    pub fn new(session: ReviewSession, options: ServerOptions) -> Self {
        Self { session: Arc::new(RwLock::new(session)), options: Arc::new(options) }
    }

    pub fn session(&self) -> std::sync::RwLockReadGuard<'_, ReviewSession> {
        self.session.read().expect("session lock poisoned")
    }

    fn session_mut(&self) -> std::sync::RwLockWriteGuard<'_, ReviewSession> {
        self.session.write().expect("session lock poisoned")
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/session", get(get_session))
        .route("/api/volumes", get(list_volumes))
        .route("/api/volumes/{id}", get(get_volume))
        .route("/api/volumes/{id}/slices/{file}", get(get_slice))
        .route("/api/volumes/{id}/label", post(set_label).delete(clear_label))
        .route("/api/metrics", get(get_metrics))
        .route("/api/sweep", get(get_sweep))
        .route("/api/finetune-set/export", post(export_set));
    let app = match &state.options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("review server listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn threshold_param(q: &HashMap<String, String>) -> ApiResult<ThresholdPolicy> {
    match q.get("threshold") {
        None => Ok(ThresholdPolicy::default()),
        Some(s) => {
            let t: f64 = s.parse().map_err(|_| ApiError::bad_request(format!("threshold {s:?} is not a number")))?;
            ThresholdPolicy::new(t).map_err(|e| ApiError::bad_request(e.to_string()))
        }
    }
}

fn usize_param(q: &HashMap<String, String>, name: &str, default: usize, max: usize) -> ApiResult<usize> {
    match q.get(name) {
        None => Ok(default),
        Some(s) => match s.parse::<usize>() {
            Ok(v) if (1..=max).contains(&v) => Ok(v),
            _ => Err(ApiError::bad_request(format!("{name} must be an integer in 1..={max}, got {s:?}"))),
        },
    }
}

async fn get_session(State(st): State<AppState>) -> Json<Value> {
    let s = st.session();
    let (_, labels) = s.labeled();
    Json(json!({
        "source": s.manifest().source_description,
        "total_volumes": s.manifest().len(),
        "labeled_volumes": labels.len(),
        "overrides": s.overrides().len(),
        "default_threshold": ThresholdPolicy::DEFAULT_THRESHOLD,
        "display_dims": st.options.display_dims,
    }))
}

#[derive(Serialize)]
struct VolumePage {
    page: usize,
    per_page: usize,
    total: usize,
    pages: usize,
    threshold: f64,
    flagged: usize,
    volumes: Vec<VolumeRow>,
}

async fn list_volumes(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<VolumePage>> {
    let policy = threshold_param(&q)?;
    let page = usize_param(&q, "page", 1, usize::MAX)?;
    let per_page = usize_param(&q, "per_page", DEFAULT_PER_PAGE, MAX_PER_PAGE)?;
    let sort = match q.get("sort").map(String::as_str) {
        None | Some("prob_desc") => SortOrder::ProbDesc,
        Some("prob_asc") => SortOrder::ProbAsc,
        Some("id") => SortOrder::Id,
        Some(other) => return Err(ApiError::bad_request(format!("unknown sort {other:?}"))),
    };
    let s = st.session();
    let rows = s.rows(&policy, sort);
    let total = rows.len();
    let volumes = rows.into_iter().skip((page - 1).saturating_mul(per_page)).take(per_page).collect();
    Ok(Json(VolumePage {
        page,
        per_page,
        total,
        pages: total.div_ceil(per_page),
        threshold: policy.threshold(),
        flagged: s.flagged(&policy),
        volumes,
    }))
}

async fn get_volume(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let policy = threshold_param(&q)?;
    let (row, manifest, record) = {
        let s = st.session();
        let r = s.record(&id).ok_or_else(|| ApiError::from(ReviewError::UnknownId(id.clone())))?;
        (s.row(r, &policy), s.manifest().clone(), r.clone())
    };
    let dims = match st.options.display_dims {
        Some(d) => d,
        None => load_volume(&manifest, &record, None).map_err(ReviewError::from)?.dims(),
    };
    let mut body = serde_json::to_value(row).expect("row serializes");
    body["dims"] = json!(dims);
    body["slices"] = json!(dims[2]);
    Ok(Json(body))
}

async fn get_slice(State(st): State<AppState>, UrlPath((id, file)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let k: usize = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::not_found(format!("no slice {file:?}")))?;
    let (manifest, record) = {
        let s = st.session();
        let r = s.record(&id).ok_or_else(|| ApiError::from(ReviewError::UnknownId(id.clone())))?;
        (s.manifest().clone(), r.clone())
    };
    let dims = st.options.display_dims;
    let png = tokio::task::spawn_blocking(move || -> Result<Option<Vec<u8>>, ReviewError> {
        let v = load_volume(&manifest, &record, dims)?;
        Ok(slice_png(&v, k))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
    .ok_or_else(|| ApiError::not_found(format!("volume {id:?} has no slice {k}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn get_metrics(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<SessionMetrics>> {
    let policy = threshold_param(&q)?;
    Ok(Json(st.session().metrics(&policy)?))
}

async fn get_sweep(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let curve = st.session().sweep()?;
    Ok(Json(json!({ "points": curve.points })))
}

async fn set_label(State(st): State<AppState>, UrlPath(id): UrlPath<String>, body: String) -> ApiResult<Json<VolumeRow>> {
    if st.session().record(&id).is_none() {
        return Err(ReviewError::UnknownId(id).into());
    }
    let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    let v: Value = serde_json::from_str(&body).map_err(|e| unprocessable(format!("body is not JSON: {e}")))?;
    let label: Label = v
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| unprocessable("expected {\"label\": \"artifact\" | \"normal\"}".into()))?
        .parse()
        .map_err(|e| unprocessable(format!("{e}")))?;
    let mut s = st.session_mut();
    s.set_override(&id, label)?;
    let r = s.record(&id).expect("checked above");
    Ok(Json(s.row(r, &ThresholdPolicy::default())))
}

async fn clear_label(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<VolumeRow>> {
    let mut s = st.session_mut();
    s.clear_override(&id)?;
    let r = s.record(&id).expect("clear_override checks the id");
    Ok(Json(s.row(r, &ThresholdPolicy::default())))
}

async fn export_set(State(st): State<AppState>, body: String) -> ApiResult<Json<ExportOutcome>> {
    let req: ExportRequest = if body.trim().is_empty() {
        ExportRequest::default()
    } else {
        serde_json::from_str(&body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?
    };
    Ok(Json(st.session().export(&req)?))
}
