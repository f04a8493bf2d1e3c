//! JSON-over-HTTP front end for [`SessionService`].
//!
//! | method | path                    | body                         |
//! |--------|-------------------------|------------------------------|
//! | POST   | /sessions               | `{candidates, config?}`      |
//! | GET    | /sessions               |                              |
//! | GET    | /sessions/{id}          |                              |
//! | GET    | /sessions/{id}/pair     |                              |
//! | POST   | /sessions/{id}/feedback | `{winner, token?}`           |
//! | GET    | /sessions/{id}/report   |                              |
//! | DELETE | /sessions/{id}          |                              |
//!
//! Failures answer `{code, message}` with a matching status.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pfts_core::session::{CandidateInput, SessionConfig, SessionError, SessionService};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::CorruptStore { .. } | SessionError::Io { .. } | SessionError::Model(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub candidates: Vec<CandidateInput>,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub winner: usize,
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResponse {
    pub session: String,
    pub round: usize,
    pub token: String,
    pub first: usize,
    pub second: usize,
    pub first_label: String,
    pub second_label: String,
    pub v_t: f64,
}

type Svc = Arc<SessionService>;

/// Runs blocking session work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn create(
    State(svc): State<Svc>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let s = blocking(move || svc.create(req.candidates, req.config)).await?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn list(State(svc): State<Svc>) -> Json<Vec<String>> {
    Json(svc.ids())
}

async fn show(State(svc): State<Svc>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.get(&id)).await?))
}

async fn pair(State(svc): State<Svc>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let (p, s) = blocking(move || svc.next_pair(&id)).await?;
    Ok(Json(PairResponse {
        session: s.id.clone(),
        round: s.t + 1,
        first_label: s.candidates[p.first].label.clone(),
        second_label: s.candidates[p.second].label.clone(),
        token: p.token,
        first: p.first,
        second: p.second,
        v_t: p.v_t,
    }))
}

async fn feedback(
    State(svc): State<Svc>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(move || svc.submit_feedback(&id, req.winner, req.token.as_deref())).await?))
}

async fn report(State(svc): State<Svc>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.report(&id)).await?))
}

async fn close(State(svc): State<Svc>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.close(&id)).await?))
}

/// Permissive CORS so a browser client on another origin can talk to the
/// service. Preflight requests are answered directly.
async fn cors(req: Request, next: Next) -> Response {
    let mut resp = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, DELETE, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    resp
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(svc: Arc<SessionService>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(show).delete(close))
        .route("/sessions/{id}/pair", get(pair))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/report", get(report))
        .fallback(fallback)
        .layer(middleware::from_fn(cors))
        .with_state(svc)
}
