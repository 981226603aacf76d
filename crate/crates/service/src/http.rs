use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::ServiceError;
use crate::service::{CreateRequest, PoolRequest, PoolService, VaryRequest};
use crate::session::ExportFormat;

/// Error body: `{"error": code, "detail": message}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(ServiceError::BadParams(e.body_text()))
    }
}

pub fn status_for(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::SessionNotFound(_) | ServiceError::UnknownLine(_) => StatusCode::NOT_FOUND,
        ServiceError::NotPinned(_) | ServiceError::DuplicateId(_) | ServiceError::CheckpointMismatch(_) => {
            StatusCode::CONFLICT
        }
        _ if e.code() == "bad_params" => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let body = ErrorBody {
            error: self.0.code().to_string(),
            detail: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a blocking service call off the async executor.
async fn blocking<T: Send + 'static>(
    svc: &Arc<PoolService>,
    f: impl FnOnce(&PoolService) -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    let svc = svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(ServiceError::Corrupt(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

#[derive(Serialize)]
struct Created {
    id: String,
}

/// The body is optional; an empty body means default options whatever the
/// content type says.
async fn create(State(svc): State<Arc<PoolService>>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let request: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadParams(format!("invalid request body: {e}")))?
    };
    let session = blocking(&svc, move |s| s.create_session(request)).await?;
    Ok((StatusCode::CREATED, Json(Created { id: session.id })))
}

async fn pool(
    State(svc): State<Arc<PoolService>>,
    Path(id): Path<String>,
    body: Result<Json<PoolRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(request) = body?;
    let out = blocking(&svc, move |s| s.generate_pool(&id, &request)).await?;
    Ok(Json(out).into_response())
}

async fn show(State(svc): State<Arc<PoolService>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = blocking(&svc, move |s| s.get(&id)).await?;
    Ok(Json(session).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRef {
    line_id: u64,
}

async fn pin(
    State(svc): State<Arc<PoolService>>,
    Path(id): Path<String>,
    body: Result<Json<LineRef>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(r) = body?;
    let session = blocking(&svc, move |s| s.pin(&id, r.line_id)).await?;
    Ok(Json(session).into_response())
}

async fn unpin(
    State(svc): State<Arc<PoolService>>,
    Path(id): Path<String>,
    body: Result<Json<LineRef>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(r) = body?;
    let session = blocking(&svc, move |s| s.unpin(&id, r.line_id)).await?;
    Ok(Json(session).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Arrangement {
    line_ids: Vec<u64>,
}

async fn arrange(
    State(svc): State<Arc<PoolService>>,
    Path(id): Path<String>,
    body: Result<Json<Arrangement>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(a) = body?;
    let session = blocking(&svc, move |s| s.arrange(&id, a.line_ids)).await?;
    Ok(Json(session).into_response())
}

async fn vary(
    State(svc): State<Arc<PoolService>>,
    Path(id): Path<String>,
    body: Result<Json<VaryRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(request) = body?;
    let out = blocking(&svc, move |s| s.vary(&id, &request)).await?;
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(svc): State<Arc<PoolService>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let format: ExportFormat = q.format.as_deref().unwrap_or("text").parse()?;
    let doc = blocking(&svc, move |s| s.export(&id, format)).await?;
    let content_type = match format {
        ExportFormat::Text => "text/plain; charset=utf-8",
        ExportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], doc).into_response())
}

/// HTTP routes over `svc`. Cross-origin requests are allowed so the
/// browser UI can be served from its own dev server.
pub fn router(svc: Arc<PoolService>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/pool", post(pool))
        .route("/sessions/{id}/pin", post(pin))
        .route("/sessions/{id}/unpin", post(unpin))
        .route("/sessions/{id}/arrangement", put(arrange))
        .route("/sessions/{id}/vary", post(vary))
        .route("/sessions/{id}/export", get(export))
        .layer(CorsLayer::permissive())
        .with_state(svc)
}

/// Serves `svc` on `addr` until ctrl-c.
pub async fn serve(svc: Arc<PoolService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
