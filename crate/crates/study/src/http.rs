use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::config::StudyConfig;
use crate::error::StudyError;
use crate::service::{PickSubmission, RevealRequest, StudyService};

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = match &self {
            StudyError::StudyNotFound(_) | StudyError::LineupNotFound(_) => StatusCode::NOT_FOUND,
            StudyError::DuplicateStudy(_)
            | StudyError::DuplicatePick { .. }
            | StudyError::NotServed { .. }
            | StudyError::RevealBeforePick(_) => StatusCode::CONFLICT,
            StudyError::Invalid(_) | StudyError::RevealNotConfirmed | StudyError::Core(_) => StatusCode::BAD_REQUEST,
            StudyError::Io { .. } | StudyError::Json { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<StudyService>;

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(service: Shared, f: F) -> Result<Json<T>, StudyError>
where
    T: Send + 'static,
    F: FnOnce(&StudyService) -> Result<T, StudyError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .expect("service task panicked")
        .map(Json)
}

async fn create(State(s): State<Shared>, Json(cfg): Json<StudyConfig>) -> Response {
    match blocking(s, move |s| s.create_study(cfg)).await {
        Ok(body) => (StatusCode::CREATED, body).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.study_ids())
}

#[derive(Deserialize)]
struct ObserverQuery {
    observer: String,
}

async fn next(State(s): State<Shared>, Path(id): Path<String>, Query(q): Query<ObserverQuery>) -> Response {
    blocking(s, move |s| s.next_lineup(&id, &q.observer)).await.into_response()
}

async fn pick(
    State(s): State<Shared>,
    Path((id, lid)): Path<(String, String)>,
    Json(sub): Json<PickSubmission>,
) -> Response {
    blocking(s, move |s| s.submit_pick(&id, &lid, &sub)).await.into_response()
}

async fn reveal(
    State(s): State<Shared>,
    Path((id, lid)): Path<(String, String)>,
    Json(req): Json<RevealRequest>,
) -> Response {
    blocking(s, move |s| s.reveal(&id, &lid, &req)).await.into_response()
}

async fn report(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    blocking(s, move |s| s.report(&id)).await.into_response()
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/studies", post(create).get(list))
        .route("/studies/{id}/next", get(next))
        .route("/studies/{id}/report", get(report))
        .route("/studies/{id}/lineups/{lid}/pick", post(pick))
        .route("/studies/{id}/lineups/{lid}/reveal", post(reveal))
        .with_state(service)
}

pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
