use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{AnnotationService, QueueMode, ServiceError, SubmitOutcome};
use crate::taxonomy::{FlagId, FLAGS};

type Shared = Arc<AnnotationService>;

/// Routes: `GET /queue/next`, `POST /labels`, `GET /agreement`,
/// `GET /review`, `GET /flags`.
pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/queue/next", get(next_item))
        .route("/labels", post(submit))
        .route("/agreement", get(agreement))
        .route("/review", get(review))
        .route("/flags", get(flags))
        .with_state(service)
}

/// Serves until Ctrl-C.
pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::UnknownAnnotator(_) | ServiceError::UnknownContribution(_) => StatusCode::NOT_FOUND,
            ServiceError::Config(_) => StatusCode::BAD_REQUEST,
            ServiceError::Corpus(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
    #[serde(default)]
    mode: QueueMode,
}

async fn next_item(State(svc): State<Shared>, Query(q): Query<NextQuery>) -> Result<Response, ServiceError> {
    let next = svc.next_item(&q.annotator, q.mode)?;
    let body = match next.item {
        Some(item) => json!({ "status": "item", "item": item, "progress": next.progress }),
        None => json!({ "status": "empty", "progress": next.progress }),
    };
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct LabelBody {
    annotator: String,
    contribution_id: String,
    flags: Vec<String>,
}

async fn submit(State(svc): State<Shared>, Json(body): Json<LabelBody>) -> Result<Response, ServiceError> {
    // the write path does file I/O
    let outcome = tokio::task::spawn_blocking(move || svc.submit(&body.annotator, &body.contribution_id, &body.flags))
        .await
        .expect("submit task panicked")?;
    let status = match &outcome {
        SubmitOutcome::Accepted { .. } => StatusCode::OK,
        SubmitOutcome::Rejected { reasons } if reasons.iter().any(|r| r == "already labeled") => StatusCode::CONFLICT,
        SubmitOutcome::Rejected { .. } => StatusCode::UNPROCESSABLE_ENTITY,
    };
    Ok((status, Json(outcome)).into_response())
}

async fn agreement(State(svc): State<Shared>) -> Response {
    let snap = svc.agreement_stats();
    let status = if snap.is_empty() { "empty" } else { "ok" };
    let mut body = serde_json::to_value(&snap).expect("snapshot serializes");
    body["status"] = json!(status);
    Json(body).into_response()
}

async fn review(State(svc): State<Shared>) -> Response {
    Json(json!({ "items": svc.review_queue() })).into_response()
}

async fn flags() -> Response {
    Json(json!({
        "flags": FLAGS,
        "groups": {
            "positive": FlagId::POSITIVE,
            "negative": FlagId::NEGATIVE,
            "neutral": [FlagId::F11],
        },
    }))
    .into_response()
}
