//! HTTP prediction endpoint: POST /predict over an immutable shared model,
//! GET /health for model metadata. Malformed JSON is a 400 with an error
//! body; bodies over the configured limit are rejected with 413.

use std::sync::Arc;

use anyhow::Result;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Json, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use absa::embed::tokenize;
use absa::model::TrainedModel;

use crate::records::PredictionRecord;

pub struct ServeState {
    model: TrainedModel,
}

#[derive(Deserialize)]
struct PredictRequest {
    documents: Vec<String>,
}

#[derive(Serialize)]
struct PredictResponse {
    predictions: Vec<PredictionRecord>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: message })).into_response()
}

async fn predict(State(state): State<Arc<ServeState>>, body: Bytes) -> Response {
    let request: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(err) => return bad_request(format!("malformed JSON: {err}")),
    };
    let mut predictions = Vec::with_capacity(request.documents.len());
    for (i, text) in request.documents.iter().enumerate() {
        let id = format!("doc-{i}");
        let tokens = tokenize(text);
        let record = match state.model.predict(&id, &tokens, None) {
            Ok(set) => PredictionRecord::from_set(id, &set, &state.model.catalog),
            Err(err) => PredictionRecord::failed(id, err.to_string()),
        };
        predictions.push(record);
    }
    Json(PredictResponse { predictions }).into_response()
}

async fn health(State(state): State<Arc<ServeState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "architecture": state.model.arch.as_str(),
        "catalog_hash": format!("{:016x}", state.model.catalog.hash()),
        "n_aspects": state.model.catalog.len(),
        "embed_dim": state.model.config.embed_dim,
        "format_version": absa::model::MODEL_FORMAT_VERSION,
    }))
}

pub fn build_router(model: TrainedModel, max_body_bytes: usize) -> Router {
    let state = Arc::new(ServeState { model });
    Router::new()
        .route("/predict", post(predict))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

pub fn run(model: TrainedModel, port: u16, max_body_bytes: usize) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let router = build_router(model, max_body_bytes);
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        // Printed (and flushed) before serving so callers can pick up an
        // OS-assigned port.
        println!("listening on {}", listener.local_addr()?);
        use std::io::Write;
        std::io::stdout().flush()?;
        axum::serve(listener, router).await?;
        Ok(())
    })
}
