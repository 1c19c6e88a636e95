//! HTTP re-annotation queue over an annoqual project directory.
//!
//! A project directory holds:
//!
//! | path | content |
//! |------|---------|
//! | `dataset.jsonl` | dataset snapshot |
//! | `events.jsonl` | append-only annotation log (created on first write) |
//! | `samples/*.tsv` | sample matrices; the last file by name is used |
//! | `ensemble.tsv` | optional ensemble frame; enables MM hints |
//!
//! Endpoints:
//!
//! - `GET /api/queue?limit=N`
//! - `POST /api/annotations`
//! - `POST /api/recompute`
//! - `GET /api/instances/{id}`
//!
//! Reads share a lock; annotations and recomputes take it exclusively.

mod error;
mod project;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::RwLock;

pub use error::ServiceError;
pub use project::{
    AnnotationAck, AnnotationRequest, HintMode, HintSource, InstanceRecord, Project, ProjectConfig, QueueEntry,
    RecomputeSummary, SampleStats, DATASET_FILE, ENSEMBLE_FILE, EVENTS_FILE, SAMPLES_DIR,
};

pub const DEFAULT_QUEUE_LIMIT: usize = 20;

pub type SharedProject = Arc<RwLock<Project>>;

pub fn router(project: SharedProject) -> Router {
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/annotations", post(annotate))
        .route("/api/recompute", post(recompute))
        .route("/api/instances/{id}", get(instance))
        .with_state(project)
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    limit: Option<usize>,
}

async fn queue(
    State(project): State<SharedProject>,
    params: Result<Query<QueueParams>, QueryRejection>,
) -> Result<Json<Vec<QueueEntry>>, ServiceError> {
    let Query(params) = params.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let limit = params.limit.unwrap_or(DEFAULT_QUEUE_LIMIT);
    Ok(Json(project.read().await.queue(limit)?))
}

async fn annotate(
    State(project): State<SharedProject>,
    body: Result<Json<AnnotationRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<AnnotationAck>), ServiceError> {
    let Json(req) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let ack = project.write().await.annotate(req)?;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn recompute(State(project): State<SharedProject>) -> Result<Json<RecomputeSummary>, ServiceError> {
    let mut guard = project.write_owned().await;
    let summary = tokio::task::spawn_blocking(move || guard.recompute())
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(summary))
}

async fn instance(
    State(project): State<SharedProject>,
    Path(id): Path<String>,
) -> Result<Json<InstanceRecord>, ServiceError> {
    Ok(Json(project.read().await.instance(&id)?))
}

/// Opens the project and serves until Ctrl-C.
pub async fn serve(config: ProjectConfig, listen: SocketAddr) -> Result<(), ServiceError> {
    let project = tokio::task::spawn_blocking(move || Project::open(config))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let app = router(Arc::new(RwLock::new(project)));
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| ServiceError::Internal(format!("bind {listen}: {e}")))?;
    log::info!("listening on {listen}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
