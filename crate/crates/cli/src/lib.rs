//! HTTP layer over the identification service and the annotation store.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use pestid_core::catalog::ImageRecord;
use pestid_core::imaging::{encode_png, ImageSource};
use pestid_core::pipeline::IdentificationService;
use pestid_core::roi::{AnnotationStore, Decision, Point, PolygonAnnotation, ReviewResult};
use pestid_core::Error;

pub const DEFAULT_PAGE_SIZE: usize = 50;

pub struct AppState {
    pub service: Option<IdentificationService>,
    pub store: Mutex<AnnotationStore>,
    pub records: BTreeMap<String, ImageRecord>,
    pub images: Box<dyn ImageSource + Send>,
    pub page_size: usize,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/identify", post(identify))
        .route("/annotations/pending", get(pending))
        .route("/annotations/{id}", get(annotation))
        .route("/annotations/{id}/image", get(annotation_image))
        .route("/annotations/{id}/review", post(review))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownAnnotation(_) => StatusCode::NOT_FOUND,
            Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn lock(state: &AppState) -> Result<std::sync::MutexGuard<'_, AnnotationStore>, ApiError> {
    state
        .store
        .lock()
        .map_err(|_| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "annotation store poisoned".into()))
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let pending = lock(&state)?.pending().len();
    let (requests, mean_latency_ms) = state.service.as_ref().map(|s| s.latency_stats()).unwrap_or((0, 0.0));
    Ok(Json(serde_json::json!({
        "model_loaded": state.service.is_some(),
        "pending_annotations": pending,
        "identify_requests": requests,
        "mean_latency_ms": mean_latency_ms,
    })))
}

#[derive(Debug, Deserialize)]
struct IdentifyParams {
    k: Option<usize>,
}

async fn identify(
    State(state): State<Arc<AppState>>,
    Query(params): Query<IdentifyParams>,
    body: Bytes,
) -> Result<Response, ApiError> {
    if state.service.is_none() {
        return Err(ApiError(StatusCode::SERVICE_UNAVAILABLE, "no model loaded".into()));
    }
    let k = params.k.unwrap_or(3);
    let result = tokio::task::spawn_blocking(move || {
        let service = state.service.as_ref().expect("checked above");
        service.identify_bytes(&body, k)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result).into_response())
}

#[derive(Debug, Deserialize)]
struct PageParams {
    page: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PendingItem {
    pub annotation_id: String,
    pub record_id: String,
    pub vertices: Vec<Point>,
    pub round: Option<u32>,
    pub image_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PendingPage {
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<PendingItem>,
}

async fn pending(
    State(state): State<Arc<AppState>>,
    Query(params): Query<PageParams>,
) -> Result<Json<PendingPage>, ApiError> {
    let page = params.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError(StatusCode::BAD_REQUEST, "pages start at 1".into()));
    }
    let store = lock(&state)?;
    let all = store.pending();
    let items = all
        .iter()
        .skip((page - 1) * state.page_size)
        .take(state.page_size)
        .map(|a| PendingItem {
            annotation_id: a.annotation_id.clone(),
            record_id: a.record_id.clone(),
            vertices: a.vertices.clone(),
            round: a.round,
            image_url: format!("/annotations/{}/image", a.annotation_id),
        })
        .collect();
    Ok(Json(PendingPage {
        page,
        page_size: state.page_size,
        total: all.len(),
        items,
    }))
}

fn find(state: &AppState, id: &str) -> Result<PolygonAnnotation, ApiError> {
    lock(state)?
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown annotation {id:?}")))
}

async fn annotation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<PolygonAnnotation>, ApiError> {
    find(&state, &id).map(Json)
}

async fn annotation_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let a = find(&state, &id)?;
    let record = state
        .records
        .get(&a.record_id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("record {:?} not in the manifest", a.record_id)))?;
    let img = state.images.load(record)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(&img)).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ReviewBody {
    pub decision: Decision,
    #[serde(default)]
    pub vertices: Option<Vec<Point>>,
}

async fn review(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<ReviewBody>,
) -> Result<Response, ApiError> {
    let result = ReviewResult {
        annotation_id: id,
        decision: body.decision,
        vertices: body.vertices,
    };
    let mut outcomes = lock(&state)?.import_reviewed_annotations(&[result])?;
    Ok(Json(outcomes.remove(0)).into_response())
}
