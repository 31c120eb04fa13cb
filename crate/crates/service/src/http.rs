use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::session::ObserveRequest;
use crate::store::Store;
use crate::summary::{grid_export, proposal_view, summarize, GridExport, ProposalView, SessionSummary};

type AppState = Arc<Store>;

/// Parses a JSON body, reporting the path of the offending field.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let paths = if path == "." { Vec::new() } else { vec![path] };
        ServiceError::validation(format!("malformed request body: {}", e.inner()), paths)
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub session: SessionSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObserveResponse {
    pub applied: bool,
    pub session: SessionSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightRequest {
    pub omega: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightResponse {
    pub acknowledged: bool,
    pub omega: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GridQuery {
    pub resolution: Option<usize>,
}

async fn create_session(State(store): State<AppState>, body: Bytes) -> Result<impl IntoResponse> {
    let config = parse(&body)?;
    let created = blocking(move || {
        let session = store.create(config)?;
        Ok(Created {
            id: session.id().to_string(),
            session: summarize(&session, None)?,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GridQuery>,
) -> Result<Json<SessionSummary>> {
    let session = store.get(&id)?;
    Ok(Json(blocking(move || summarize(&session, q.resolution)).await?))
}

async fn suggest(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<ProposalView>> {
    let view = blocking(move || {
        let session = store.suggest(&id)?;
        let proposal = session
            .outstanding()
            .ok_or_else(|| ServiceError::Internal("suggest left no outstanding proposal".into()))?;
        Ok(proposal_view(&session, proposal))
    })
    .await?;
    Ok(Json(view))
}

async fn observe(State(store): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<ObserveResponse>> {
    let request: ObserveRequest = parse(&body)?;
    let response = blocking(move || {
        let observed = store.observe(&id, request)?;
        Ok(ObserveResponse {
            applied: observed.applied,
            session: summarize(&observed.session, None)?,
        })
    })
    .await?;
    Ok(Json(response))
}

async fn update_weight(
    State(store): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<WeightResponse>> {
    let request: WeightRequest = parse(&body)?;
    let session = blocking(move || store.update_weight(&id, request.omega)).await?;
    Ok(Json(WeightResponse {
        acknowledged: true,
        omega: session.config().omega,
    }))
}

async fn grid(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GridQuery>,
) -> Result<Json<GridExport>> {
    let session = store.get(&id)?;
    let resolution = q
        .resolution
        .ok_or_else(|| ServiceError::validation("resolution is required", vec!["resolution".into()]))?;
    Ok(Json(blocking(move || grid_export(&session, resolution)).await?))
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound("no such route".into())
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/suggest", post(suggest))
        .route("/sessions/{id}/observe", post(observe))
        .route("/sessions/{id}/weight", patch(update_weight))
        .route("/sessions/{id}/grid", get(grid))
        .fallback(not_found)
        .with_state(store)
}

pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(store)).await
}
