//! HTTP contract tests for the gateway endpoints, driven in-process
//! through the router (no sockets).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::util::ServiceExt;

use memboost_core::synth::{generate_corpus, write_corpus_jsonl};
use memboost_core::workload::QueryRecord;
use memboost_gateway::config::{ControllerSpec, GatewayConfig};
use memboost_gateway::http::{build_state, router};

fn corpus_file(dir: &Path, n: usize) -> (PathBuf, Vec<QueryRecord>) {
    let records = generate_corpus(n, 41);
    let path = dir.join("corpus.jsonl");
    write_corpus_jsonl(&records, &path).unwrap();
    (path, records)
}

/// A scripted gateway over an 8-question corpus.
fn scripted_gateway(dir: &Path) -> (Router, Vec<QueryRecord>) {
    let (corpus_path, records) = corpus_file(dir, 8);
    let config = GatewayConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        corpus_path: Some(corpus_path),
        corpus_limit: None,
        spec: ControllerSpec::scripted_default(1),
    };
    let state = Arc::new(build_state(&config).unwrap());
    (router(state), records)
}

async fn send(router: &Router, request: Request<Body>) -> (StatusCode, Value) {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn post_json(uri: &str, body: &Value) -> Request<Body> {
    Request::builder()
        .method("POST")
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::builder().uri(uri).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn fresh_gateway_reports_an_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = scripted_gateway(dir.path());

    let (status, stats) = send(&router, get("/stats")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["entry_count"], 0);
    assert_eq!(stats["last_entry_id"], 0);
    assert_eq!(stats["requests"], 0);
    assert_eq!(stats["memory_hits"], 0);
    assert_eq!(stats["oracle_calls"], 0);
    assert_eq!(stats["accuracy"], Value::Null);
}

#[tokio::test]
async fn empty_question_is_rejected_with_400() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = scripted_gateway(dir.path());

    let (status, body) = send(&router, post_json("/v1/query", &json!({ "question": "   " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("question"));
}

#[tokio::test]
async fn too_many_options_are_rejected_with_400() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = scripted_gateway(dir.path());

    let options: Vec<String> = (0..11).map(|i| format!("option {i}")).collect();
    let (status, _) = send(
        &router,
        post_json("/v1/query", &json!({ "question": "Which one?", "options": options })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn warm_up_replay_serves_the_second_request_from_memory() {
    let dir = tempfile::tempdir().unwrap();
    let (router, records) = scripted_gateway(dir.path());
    let record = &records[0];
    let request_body = json!({
        "question": record.question,
        "options": record.options,
        "qid": record.qid,
    });

    // Cold: escalates to the oracle and writes back.
    let (status, first) = send(&router, post_json("/v1/query", &request_body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["source"], "oracle");
    assert_eq!(first["wrote_back"], true);
    // Scripted-oracle + controller-overhead modeled latency.
    assert!((first["latency_seconds"].as_f64().unwrap() - 0.21).abs() < 1e-12);

    // Warm: an exact repeat is answered from memory, verbatim.
    let (status, second) = send(&router, post_json("/v1/query", &request_body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(second["source"], "memory");
    assert_eq!(second["wrote_back"], false);
    assert!(second["similarity"].as_f64().unwrap() >= 0.999);
    assert_eq!(second["answer"], first["answer"]);
    assert!((second["latency_seconds"].as_f64().unwrap() - 0.01).abs() < 1e-12);

    let (_, stats) = send(&router, get("/stats")).await;
    assert_eq!(stats["entry_count"], 1);
    assert_eq!(stats["requests"], 2);
    assert_eq!(stats["memory_hits"], 1);
    assert_eq!(stats["oracle_calls"], 1);
    // Both requests were graded against the corpus gold label; the
    // scripted oracle is perfect, so the running accuracy is 1.0.
    assert_eq!(stats["accuracy"], 1.0);
}

#[tokio::test]
async fn qid_only_requests_inherit_corpus_options() {
    let dir = tempfile::tempdir().unwrap();
    let (router, records) = scripted_gateway(dir.path());
    let record = &records[3];

    // No options in the request: the corpus fills them in, so the scripted
    // oracle still answers within range and is graded correct.
    let body = json!({ "question": record.question, "qid": record.qid });
    let (status, response) = send(&router, post_json("/v1/query", &body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(response["source"], "oracle");

    let (_, stats) = send(&router, get("/stats")).await;
    assert_eq!(stats["accuracy"], 1.0);
}

#[tokio::test]
async fn unknown_questions_are_served_but_not_graded() {
    let dir = tempfile::tempdir().unwrap();
    let (router, _) = scripted_gateway(dir.path());

    let body = json!({ "question": "Is working capital a stock or a flow measure?" });
    let (status, response) = send(&router, post_json("/v1/query", &body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(response["source"], "oracle");

    let (_, stats) = send(&router, get("/stats")).await;
    assert_eq!(stats["requests"], 1);
    assert_eq!(stats["accuracy"], Value::Null, "no gold label, nothing graded");
}

#[tokio::test]
async fn snapshot_endpoint_writes_the_store_to_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (router, records) = scripted_gateway(dir.path());
    let record = &records[0];

    let body = json!({
        "question": record.question,
        "options": record.options,
        "qid": record.qid,
    });
    send(&router, post_json("/v1/query", &body)).await;

    let snapshot_path = dir.path().join("memory.snapshot.jsonl");
    let (status, response) = send(
        &router,
        post_json("/memory/snapshot", &json!({ "path": snapshot_path })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(response["entries_written"], 1);
    assert!(snapshot_path.exists());

    // An empty path is a client error, not a crash.
    let (status, _) = send(&router, post_json("/memory/snapshot", &json!({ "path": "" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
