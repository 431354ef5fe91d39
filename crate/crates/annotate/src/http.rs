//! JSON-over-HTTP front end.
//!
//! | method | path             | body / query                              |
//! |--------|------------------|-------------------------------------------|
//! | GET    | `/api/next`      | `?tagger=…&phase=…`                       |
//! | POST   | `/api/score`     | `{sample_id, tagger_id, phase, score}`    |
//! | GET    | `/api/progress`  |                                           |
//! | GET    | `/api/agreement` |                                           |
//! | GET    | `/api/export`    | corpus JSONL                              |
//! | POST   | `/api/phase`     | `{phase}` (operator)                      |
//! | POST   | `/api/taggers`   | `{tagger_id}` (operator)                  |
//!
//! Errors answer `{"status":"rejected","reason":…,"message":…}` with 400
//! (invalid score or phase), 403 (unknown tagger, closed phase), 404
//! (unknown sample) or 409 (duplicate).

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::service::{AnnotationService, ScoreSubmission, ServiceError};

type Shared = Arc<AnnotationService>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut body = json!({
            "status": "rejected",
            "reason": self.reason(),
            "message": self.to_string(),
        });
        if let ServiceError::Duplicate { original_seq, .. } = &self {
            body["original_seq"] = json!(original_seq);
        }
        (status, Json(body)).into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    tagger: String,
    phase: u32,
}

#[derive(Deserialize)]
struct PhaseBody {
    phase: u32,
}

#[derive(Deserialize)]
struct TaggerBody {
    tagger_id: String,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .expect("service task panicked")
}

async fn next(
    State(svc): State<Shared>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.next_item(&q.tagger, q.phase)?).into_response())
}

async fn score(
    State(svc): State<Shared>,
    Json(sub): Json<ScoreSubmission>,
) -> Result<Response, ServiceError> {
    let acc = blocking(move || svc.post_score(&sub)).await?;
    Ok(
        Json(json!({"status": "accepted", "seq": acc.seq, "timestamp_ms": acc.timestamp_ms}))
            .into_response(),
    )
}

async fn progress(State(svc): State<Shared>) -> Response {
    Json(svc.progress()).into_response()
}

async fn agreement(State(svc): State<Shared>) -> Response {
    let tables = tokio::task::spawn_blocking(move || svc.live_agreement())
        .await
        .expect("agreement task panicked");
    Json(tables).into_response()
}

async fn export(State(svc): State<Shared>) -> Response {
    let bytes = tokio::task::spawn_blocking(move || svc.export_bytes())
        .await
        .expect("export task panicked");
    ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response()
}

async fn phase(
    State(svc): State<Shared>,
    Json(body): Json<PhaseBody>,
) -> Result<Response, ServiceError> {
    let open = blocking(move || svc.open_phase(body.phase)).await?;
    Ok(Json(json!({"open_phases": open})).into_response())
}

async fn taggers(
    State(svc): State<Shared>,
    Json(body): Json<TaggerBody>,
) -> Result<Response, ServiceError> {
    let all = blocking(move || svc.register_tagger(&body.tagger_id)).await?;
    Ok(Json(json!({"taggers": all})).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/next", get(next))
        .route("/api/score", post(score))
        .route("/api/progress", get(progress))
        .route("/api/agreement", get(agreement))
        .route("/api/export", get(export))
        .route("/api/phase", post(phase))
        .route("/api/taggers", post(taggers))
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(listener: TcpListener, service: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(addr: SocketAddr, service: Shared) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(serve(listener, service));
    Ok(local)
}
