use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use hyperrag_core::engine::Engine;
use hyperrag_core::pipeline::{parse_answer_fields, PipelineError, PipelineMode};
use hyperrag_core::retrieval::RetrievalError;
use hyperrag_core::store::IndexBundle;

pub struct ServerState {
    pub engine: Engine,
    pub bundle: IndexBundle,
    pub manifest_digest: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    query: String,
    mode: Option<String>,
    k: Option<usize>,
}

fn error(status: StatusCode, message: impl Into<String>, stage: Option<&str>) -> Response {
    let mut body = json!({ "error": message.into() });
    if let Some(s) = stage {
        body["stage"] = Value::String(s.to_string());
    }
    (status, Json(body)).into_response()
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/query", post(query))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<ServerState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "manifest_digest": state.manifest_digest }))
}

async fn query(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}"), None),
    };
    let mode = match req.mode.as_deref() {
        None => PipelineMode::Full,
        Some(m) => match m.parse::<PipelineMode>() {
            Ok(m) => m,
            Err(e) => return error(StatusCode::BAD_REQUEST, e, None),
        },
    };
    if req.query.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "query is empty", None);
    }
    if req.k == Some(0) {
        return error(StatusCode::BAD_REQUEST, "k must be at least 1", None);
    }

    let started = Instant::now();
    let worker = state.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let pipeline = worker.engine.pipeline();
        pipeline.run(&req.query, mode, worker.bundle.graphs(), req.k)
    })
    .await;
    let total_ms = started.elapsed().as_secs_f64() * 1000.0;

    let result = match joined {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"), None),
    };
    match result {
        Ok(r) => {
            let fields = parse_answer_fields(&r.final_answer);
            Json(json!({
                "mode": r.mode,
                "final_answer": r.final_answer,
                "answer_fields": fields,
                "provenance": r.provenance,
                "timings": { "total_ms": total_ms },
            }))
            .into_response()
        }
        Err(e @ PipelineError::Retrieval { source: RetrievalError::EmptyQuery, .. }) => {
            error(StatusCode::BAD_REQUEST, e.to_string(), e.stage())
        }
        Err(e @ PipelineError::MissingGraph { .. }) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
        Err(e) => {
            log::error!("{e}");
            error(StatusCode::BAD_GATEWAY, e.to_string(), e.stage())
        }
    }
}

pub async fn serve(state: Arc<ServerState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
