//! Annotation service: sessions, polygon qualification with feedback,
//! 20-image batches with hidden golden questions, and click persistence.
//!
//! Clients authenticate with the bearer token returned by `POST /session`.

pub mod api;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};

pub use api::*;
pub use state::{Service, ServiceConfig, ServiceError, BATCH_CLICKS_FILE, QUALIFICATION_DIR};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            schema_version: API_SCHEMA_VERSION,
            error: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<Service>;
type Reply<T> = Result<Json<T>, ServiceError>;

fn bearer(headers: &HeaderMap) -> Result<&str, ServiceError> {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or(ServiceError::Unauthorized)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(t)| t)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn create_session(
    State(svc): State<Shared>,
    payload: Option<Json<NewSession>>,
) -> (StatusCode, Json<SessionCreated>) {
    let req = payload.map(|Json(r)| r).unwrap_or_default();
    (StatusCode::CREATED, Json(svc.create_session(req)))
}

async fn get_qualification(State(svc): State<Shared>, headers: HeaderMap) -> Reply<QualificationTest> {
    svc.qualification(bearer(&headers)?).map(Json)
}

async fn post_qualification(
    State(svc): State<Shared>,
    headers: HeaderMap,
    payload: Result<Json<QualificationSubmission>, JsonRejection>,
) -> Reply<QualificationOutcome> {
    let token = bearer(&headers)?;
    svc.submit_qualification(token, body(payload)?).map(Json)
}

async fn get_batch(State(svc): State<Shared>, headers: HeaderMap) -> Reply<BatchPayload> {
    svc.fetch_batch(bearer(&headers)?).map(Json)
}

async fn post_batch(
    State(svc): State<Shared>,
    headers: HeaderMap,
    payload: Result<Json<BatchSubmission>, JsonRejection>,
) -> Reply<BatchOutcome> {
    let token = bearer(&headers)?;
    svc.submit_batch(token, body(payload)?).map(Json)
}

async fn get_instructions(State(svc): State<Shared>) -> Json<Instructions> {
    Json(svc.instructions())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/session", axum::routing::post(create_session))
        .route("/qualification", get(get_qualification).post(post_qualification))
        .route("/batch", get(get_batch).post(post_batch))
        .route("/instructions", get(get_instructions))
        .with_state(service)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, service: Arc<Service>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
