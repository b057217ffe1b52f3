//! HTTP routes over a [`Workbench`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use nuclick_core::signals::GuideInput;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::session::Session;
use crate::workbench::Workbench;

/// Largest accepted image upload.
const MAX_BODY: usize = 64 << 20;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

pub fn router(bench: Arc<Workbench>) -> Router {
    Router::new()
        .route("/api/models", get(list_models))
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(session_state))
        .route("/api/sessions/{id}/image", put(put_image))
        .route("/api/sessions/{id}/objects", post(add_object))
        .route("/api/sessions/{id}/objects/{oid}", patch(revise_object).delete(delete_object))
        .route("/api/sessions/{id}/labelmap", get(label_map))
        .route("/api/sessions/{id}/export", get(export))
        .route("/api/sessions/{id}/undo", post(undo))
        .layer(axum::extract::DefaultBodyLimit::max(MAX_BODY))
        .with_state(bench)
}

/// Client-supplied id that makes a retried mutation a no-op.
fn request_id(headers: &HeaderMap) -> Option<String> {
    ["idempotency-key", "x-request-id"]
        .iter()
        .find_map(|h| headers.get(*h))
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
}

/// Runs `f` under the session lock on the blocking pool; inference is
/// CPU-bound.
async fn with_session<T: Send + 'static>(
    bench: Arc<Workbench>,
    id: String,
    f: impl FnOnce(&mut Session, &Workbench) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || {
        let session = bench.session(&id)?;
        let mut guard = session.lock().map_err(|_| ServiceError::Internal("session lock poisoned".into()))?;
        f(&mut guard, &bench)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn parse_guide(body: &Bytes) -> ApiResult<GuideInput> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Invalid(format!("guide JSON: {e}")))
}

async fn list_models(State(bench): State<Arc<Workbench>>) -> Json<Value> {
    Json(json!(bench.registry().list()))
}

#[derive(Deserialize)]
struct CreateSession {
    model: String,
}

async fn create_session(State(bench): State<Arc<Workbench>>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = serde_json::from_slice(&body).map_err(|e| ServiceError::Invalid(format!("session JSON: {e}")))?;
    let rid = request_id(&headers);
    let model = req.model.clone();
    let id = tokio::task::spawn_blocking(move || bench.create_session(&req.model, rid))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "model": model }))))
}

async fn list_sessions(State(bench): State<Arc<Workbench>>) -> Json<Value> {
    Json(json!(bench.session_ids()))
}

async fn session_state(State(bench): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let state = with_session(bench, id, |s, _| Ok(s.state())).await?;
    Ok(Json(json!(state)))
}

async fn put_image(State(bench): State<Arc<Workbench>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let rid = request_id(&headers);
    Ok(Json(with_session(bench, id, move |s, _| s.set_image(body.to_vec(), rid)).await?))
}

async fn add_object(State(bench): State<Arc<Workbench>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let guide = parse_guide(&body)?;
    let rid = request_id(&headers);
    let v = with_session(bench, id, move |s, _| s.annotate(guide, rid)).await?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn revise_object(
    State(bench): State<Arc<Workbench>>,
    Path((id, oid)): Path<(String, u32)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let guide = parse_guide(&body)?;
    let rid = request_id(&headers);
    Ok(Json(with_session(bench, id, move |s, _| s.revise(oid, guide, rid)).await?))
}

async fn delete_object(State(bench): State<Arc<Workbench>>, Path((id, oid)): Path<(String, u32)>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let rid = request_id(&headers);
    Ok(Json(with_session(bench, id, move |s, _| s.delete(oid, rid)).await?))
}

async fn label_map(State(bench): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Response> {
    let png = with_session(bench, id, |s, _| s.label_map_png()).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn export(State(bench): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let rle = with_session(bench, id, |s, _| Ok(s.export_rle())).await?;
    Ok(Json(json!(rle)))
}

async fn undo(State(bench): State<Arc<Workbench>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(with_session(bench, id, |s, b| s.undo(b.registry())).await?))
}
