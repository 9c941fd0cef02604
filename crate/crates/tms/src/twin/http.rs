//! HTTP API over the twin store.
//!
//! ```text
//! GET    /twins                                    list twin ids
//! GET    /twins/{site}/{node}                      fetch a document
//! PUT    /twins/{site}/{node}                      create/replace content
//! PATCH  /twins/{site}/{node}/properties/{*path}   set one scalar leaf
//! GET    /twins/{site}/{node}/signatures           opportunistic selection
//!        ?from=&to=&sources=&min_quality=&limit=&wr=
//! ```
//!
//! Bodies are JSON; errors come back as `{"code", "message"}` with status
//! 400, 404, or 409.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::NodeId;

use super::{SigSource, SignatureQuery, StoreError, TwinContent, TwinId, TwinStore};

/// Builds the API router over a store handle.
pub fn router(store: TwinStore) -> Router {
    Router::new()
        .route("/twins", get(list_twins))
        .route("/twins/{site}/{node}", get(get_twin).put(put_twin))
        .route(
            "/twins/{site}/{node}/properties/{*path}",
            axum::routing::patch(patch_property),
        )
        .route("/twins/{site}/{node}/signatures", get(get_signatures))
        .with_state(store)
}

/// Binds and serves the API until the process ends or the task is dropped.
pub async fn serve(store: TwinStore, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<StoreError> for ApiError {
    fn from(err: StoreError) -> Self {
        match &err {
            StoreError::NotFound(_) => {
                Self::new(StatusCode::NOT_FOUND, "not_found", err.to_string())
            }
            StoreError::Io(_) | StoreError::Corrupt(_) => Self::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "storage",
                err.to_string(),
            ),
            _ => Self::bad_request(err.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after epoch")
        .as_millis() as u64
}

fn twin_id(site: &str, node: &str) -> Result<TwinId, ApiError> {
    let node: NodeId = node
        .parse()
        .map_err(|_| ApiError::bad_request(format!("invalid node id `{node}`")))?;
    TwinId::new(site, node).map_err(ApiError::from)
}

async fn list_twins(State(store): State<TwinStore>) -> Json<Vec<String>> {
    Json(store.list_twins().iter().map(TwinId::to_string).collect())
}

async fn get_twin(
    State(store): State<TwinStore>,
    Path((site, node)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let id = twin_id(&site, &node)?;
    match store.get_twin(&id) {
        Some(doc) => Ok(Json(doc).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("twin `{id}` not found"),
        )),
    }
}

/// PUT body: twin content, optionally restating the twin id. A restated id
/// that disagrees with the URL is a conflict.
#[derive(Debug, Deserialize)]
struct PutBody {
    twin_id: Option<TwinId>,
    #[serde(default)]
    attributes: serde_json::Map<String, Value>,
    #[serde(default)]
    features: std::collections::BTreeMap<String, super::Feature>,
}

#[derive(Debug, Serialize)]
struct RevisionReply {
    revision: u64,
}

async fn put_twin(
    State(store): State<TwinStore>,
    Path((site, node)): Path<(String, String)>,
    Json(body): Json<PutBody>,
) -> Result<Json<RevisionReply>, ApiError> {
    let id = twin_id(&site, &node)?;
    if let Some(stated) = &body.twin_id {
        if *stated != id {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "id_mismatch",
                format!("body twin_id `{stated}` conflicts with URL `{id}`"),
            ));
        }
    }
    let content = TwinContent {
        attributes: body.attributes,
        features: body.features,
    };
    let revision = store.upsert_twin(&id, content, now_ms())?;
    Ok(Json(RevisionReply { revision }))
}

async fn patch_property(
    State(store): State<TwinStore>,
    Path((site, node, path)): Path<(String, String, String)>,
    Json(value): Json<Value>,
) -> Result<Json<RevisionReply>, ApiError> {
    let id = twin_id(&site, &node)?;
    let revision = store.set_property(&id, &path, value, now_ms())?;
    Ok(Json(RevisionReply { revision }))
}

#[derive(Debug, Deserialize)]
struct SignatureParams {
    from: Option<u64>,
    to: Option<u64>,
    /// Comma-separated source names; omitted means all.
    sources: Option<String>,
    min_quality: Option<f64>,
    limit: Option<usize>,
    wr: Option<f64>,
}

async fn get_signatures(
    State(store): State<TwinStore>,
    Path((site, node)): Path<(String, String)>,
    Query(params): Query<SignatureParams>,
) -> Result<Response, ApiError> {
    let id = twin_id(&site, &node)?;
    let mut sources = BTreeSet::new();
    if let Some(list) = &params.sources {
        for name in list.split(',').filter(|s| !s.is_empty()) {
            let source: SigSource = name
                .parse()
                .map_err(|_| ApiError::bad_request(format!("unknown source `{name}`")))?;
            sources.insert(source);
        }
    }
    let to = params.to.unwrap_or_else(now_ms);
    let query = SignatureQuery {
        twin_id: id,
        sources,
        from_ms: params.from.unwrap_or(0),
        to_ms: to,
        min_quality: params.min_quality.unwrap_or(0.0),
        max_results: params.limit.unwrap_or(100),
        recency_weight: params.wr.unwrap_or(0.5),
        // recency is measured against the window end
        reference_ms: to,
    };
    let records = store.select_signatures(&query)?;
    Ok(Json(records).into_response())
}
