//! The HTTP gateway: the serving loop behind three endpoints.
//!
//! `POST /v1/query` runs one query through the controller, `GET /stats`
//! reports store contents plus running totals, and `POST /memory/snapshot`
//! persists the store on demand. The controller is synchronous (its model
//! clients block), so handlers hop to the blocking pool; the store's
//! reader-writer contract makes concurrent requests safe, including
//! snapshots racing write-backs.
//!
//! When a corpus is configured, qids map to gold labels: known queries are
//! graded into a running accuracy, and scripted backends receive the gold
//! hint — which is what lets an offline gateway replay a benchmark stream
//! decision-for-decision.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use memboost_core::controller::{AnswerSource, Controller, QueryInput};
use memboost_core::models::extract_label;
use memboost_core::workload::{load_corpus, QueryRecord, MAX_OPTIONS};

use crate::config::GatewayConfig;

// ── State ────────────────────────────────────────────────────────────────

/// Shared gateway state: one controller plus bookkeeping.
pub struct GatewayState {
    controller: Controller,
    /// Corpus records by qid, for gold hints and grading.
    gold: HashMap<String, QueryRecord>,
    totals: Mutex<Totals>,
    snapshot_path: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Totals {
    requests: u64,
    memory_hits: u64,
    oracle_calls: u64,
    graded: u64,
    graded_correct: u64,
}

/// Assemble the gateway: build the stack, verify backends are reachable,
/// and index the corpus when one is configured. Fails fast — a gateway
/// that cannot route traffic should not start.
pub fn build_state(config: &GatewayConfig) -> anyhow::Result<GatewayState> {
    let controller = config.spec.build()?;
    controller.health_check().context("startup health check")?;
    let gold = match &config.corpus_path {
        Some(path) => load_corpus(path, config.corpus_limit)
            .with_context(|| format!("loading corpus {}", path.display()))?
            .into_iter()
            .map(|record| (record.qid.clone(), record))
            .collect(),
        None => HashMap::new(),
    };
    Ok(GatewayState {
        controller,
        gold,
        totals: Mutex::new(Totals::default()),
        snapshot_path: config.spec.snapshot_path.clone(),
    })
}

pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route("/v1/query", post(handle_query))
        .route("/stats", get(handle_stats))
        .route("/memory/snapshot", post(handle_snapshot))
        .with_state(state)
}

/// Run the gateway until interrupted, then flush the shutdown snapshot.
/// Owns its own runtime; call from a synchronous context.
pub fn serve(config: GatewayConfig) -> anyhow::Result<()> {
    let state = Arc::new(build_state(&config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime.block_on(serve_with_state(Arc::clone(&state), config.listen))?;

    if let Some(path) = &state.snapshot_path {
        let written = state
            .controller
            .snapshot_memory(path)
            .with_context(|| format!("writing shutdown snapshot {}", path.display()))?;
        tracing::info!(entries = written, path = %path.display(), "shutdown snapshot written");
    }
    Ok(())
}

async fn serve_with_state(state: Arc<GatewayState>, listen: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    tracing::info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .context("serving")
}

async fn shutdown_signal() {
    if tokio::signal::ctrl_c().await.is_ok() {
        tracing::info!("shutdown signal received");
    }
}

// ── Wire types ───────────────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub qid: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct QueryResponse {
    pub answer: String,
    pub source: AnswerSource,
    pub similarity: Option<f32>,
    pub latency_seconds: f64,
    pub wrote_back: bool,
}

#[derive(Debug, Serialize)]
struct StatsResponse {
    entry_count: usize,
    per_category: BTreeMap<String, usize>,
    last_entry_id: u64,
    requests: u64,
    memory_hits: u64,
    oracle_calls: u64,
    /// Running accuracy over requests with a known gold label; null until
    /// one has been graded.
    accuracy: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct SnapshotRequest {
    path: String,
}

#[derive(Debug, Serialize)]
struct SnapshotResponse {
    entries_written: usize,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

type HandlerError = (StatusCode, Json<ErrorBody>);

fn bad_request(message: impl Into<String>) -> HandlerError {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: message.into() }))
}

fn internal(message: impl Into<String>) -> HandlerError {
    (StatusCode::INTERNAL_SERVER_ERROR, Json(ErrorBody { error: message.into() }))
}

// ── Handlers ─────────────────────────────────────────────────────────────

async fn handle_query(
    State(state): State<Arc<GatewayState>>,
    Json(request): Json<QueryRequest>,
) -> Result<Json<QueryResponse>, HandlerError> {
    if request.question.trim().is_empty() {
        return Err(bad_request("question must be non-empty"));
    }
    if request.options.len() > MAX_OPTIONS {
        return Err(bad_request(format!("at most {MAX_OPTIONS} options are supported")));
    }

    let record = request.qid.as_deref().and_then(|qid| state.gold.get(qid));
    let input = QueryInput {
        text: request.question,
        qid: request.qid.clone(),
        category: record.map(|r| r.category.clone()),
        // A known qid fills in options the client omitted, so qid-only
        // replays behave exactly like benchmark events.
        options: if request.options.is_empty() {
            record.map(|r| r.options.clone()).unwrap_or_default()
        } else {
            request.options
        },
        gold_label: record.map(|r| r.gold_label),
    };
    let gold = record.map(|r| (r.gold_label, r.options.len()));

    let worker_state = Arc::clone(&state);
    let served = tokio::task::spawn_blocking(move || worker_state.controller.handle_query(&input))
        .await
        .map_err(|e| internal(format!("query worker panicked: {e}")))?
        .map_err(|e| internal(format!("query failed: {e:#}")))?;

    {
        let mut totals = state.totals.lock().expect("totals lock poisoned");
        totals.requests += 1;
        if served.memory_used {
            totals.memory_hits += 1;
        } else {
            totals.oracle_calls += 1;
        }
        if let Some((gold_label, option_count)) = gold {
            totals.graded += 1;
            if extract_label(&served.answer, option_count) == Some(gold_label) {
                totals.graded_correct += 1;
            }
        }
    }

    Ok(Json(QueryResponse {
        answer: served.answer,
        source: served.source,
        similarity: served.top_similarity,
        latency_seconds: served.latency_seconds,
        wrote_back: served.wrote_back,
    }))
}

async fn handle_stats(State(state): State<Arc<GatewayState>>) -> Json<StatsResponse> {
    let stats = state.controller.memory_stats();
    let totals = *state.totals.lock().expect("totals lock poisoned");
    Json(StatsResponse {
        entry_count: stats.entry_count,
        per_category: stats.per_category,
        last_entry_id: stats.last_entry_id,
        requests: totals.requests,
        memory_hits: totals.memory_hits,
        oracle_calls: totals.oracle_calls,
        accuracy: (totals.graded > 0)
            .then(|| totals.graded_correct as f64 / totals.graded as f64),
    })
}

async fn handle_snapshot(
    State(state): State<Arc<GatewayState>>,
    Json(request): Json<SnapshotRequest>,
) -> Result<Json<SnapshotResponse>, HandlerError> {
    if request.path.trim().is_empty() {
        return Err(bad_request("path must be non-empty"));
    }
    let path = PathBuf::from(request.path);
    let worker_state = Arc::clone(&state);
    let entries_written =
        tokio::task::spawn_blocking(move || worker_state.controller.snapshot_memory(&path))
            .await
            .map_err(|e| internal(format!("snapshot worker panicked: {e}")))?
            .map_err(|e| internal(format!("snapshot failed: {e}")))?;
    Ok(Json(SnapshotResponse { entries_written }))
}
