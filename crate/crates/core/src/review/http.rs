//! JSON-over-HTTP surface of the review service, versioned under `/v1`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{Ack, DecisionRequest, NextItem, ReviewService, SessionStatus, SessionSummary};
use crate::error::{Error, ReviewError};

#[derive(Clone)]
struct AppState {
    service: Arc<ReviewService>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenRequest {
    pub recursion_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub recursion_index: u32,
    pub queue_len: usize,
    pub flagged: usize,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            Error::Review(r) => match r {
                ReviewError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
                ReviewError::UnknownSample(_) => (StatusCode::NOT_FOUND, "unknown_sample"),
                ReviewError::MissingCandidates(_) => (StatusCode::NOT_FOUND, "missing_candidates"),
                ReviewError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
                ReviewError::Closed(_) => (StatusCode::CONFLICT, "session_closed"),
                ReviewError::ConcurrentSession(..) => (StatusCode::CONFLICT, "concurrent_session"),
                ReviewError::Timeout(_) => (StatusCode::GATEWAY_TIMEOUT, "timeout"),
            },
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let body = ErrorBody {
            error: code.to_string(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> crate::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::State(format!("worker panicked: {e}"))))?
        .map_err(ApiError)
}

async fn open(State(st): State<AppState>, Json(req): Json<OpenRequest>) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let s = blocking(move || st.service.open_session(req.recursion_index)).await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionInfo {
            session_id: s.file.session_id.clone(),
            recursion_index: s.file.recursion_index,
            queue_len: s.file.queue.len(),
            flagged: s.file.queue.iter().filter(|q| q.flagged).count(),
            status: s.file.status,
        }),
    ))
}

async fn next(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<NextItem> {
    Ok(Json(blocking(move || st.service.fetch_next(&id)).await?))
}

async fn decide(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult<Ack> {
    Ok(Json(blocking(move || st.service.submit_decision(&id, req)).await?))
}

async fn close(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    Ok(Json(blocking(move || st.service.close_session(&id)).await?))
}

async fn summary(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    Ok(Json(blocking(move || st.service.summary(&id)).await?))
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            let body = ErrorBody {
                error: "unauthorized".into(),
                message: "missing or invalid bearer token".into(),
            };
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

/// Routes of the review API. With a `token`, every request must carry
/// `Authorization: Bearer <token>`.
pub fn router(service: Arc<ReviewService>, token: Option<String>) -> Router {
    let state = AppState {
        service,
        token: token.map(Into::into),
    };
    let v1 = Router::new()
        .route("/sessions", post(open))
        .route("/sessions/:id/next", get(next))
        .route("/sessions/:id/decisions", post(decide))
        .route("/sessions/:id/close", post(close))
        .route("/sessions/:id/summary", get(summary))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    Router::new().nest("/v1", v1)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, service: Arc<ReviewService>, token: Option<String>) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
    tracing::info!(%local, "review service listening");
    axum::serve(listener, router(service, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(local.to_string(), e))
}
