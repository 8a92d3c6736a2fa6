use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use stepcache::backend::{
    Backend, BackendError, CallLog, CallType, CompletionRequest, Gateway, GatewayConfig, HttpBackend,
    HttpConfig,
};

#[derive(Clone)]
struct Upstream {
    hits: Arc<AtomicUsize>,
    with_usage: bool,
    status: StatusCode,
    body: Option<&'static str>,
}

async fn chat(State(up): State<Upstream>, Json(req): Json<Value>) -> (StatusCode, String) {
    up.hits.fetch_add(1, Ordering::SeqCst);
    if let Some(body) = up.body {
        return (up.status, body.to_string());
    }
    let content = format!("echo: {}", req["messages"][0]["content"].as_str().unwrap_or(""));
    let mut reply = json!({
        "model": req["model"],
        "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }],
    });
    if up.with_usage {
        reply["usage"] = json!({ "prompt_tokens": 12, "completion_tokens": 5, "total_tokens": 17 });
    }
    (up.status, reply.to_string())
}

async fn spawn(up: Upstream) -> String {
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .with_state(up);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn upstream(with_usage: bool) -> Upstream {
    Upstream {
        hits: Arc::new(AtomicUsize::new(0)),
        with_usage,
        status: StatusCode::OK,
        body: None,
    }
}

fn gateway(base_url: String) -> Gateway {
    let backend = HttpBackend::new(HttpConfig {
        timeout: Duration::from_secs(5),
        ..HttpConfig::new(base_url, "test-model")
    })
    .unwrap();
    Gateway::with_config(
        Arc::new(backend),
        GatewayConfig {
            retries: 2,
            retry_backoff: Duration::from_millis(1),
        },
        Arc::new(CallLog::default()),
    )
}

#[tokio::test]
async fn uses_reported_usage() {
    let url = spawn(upstream(true)).await;
    let call = gateway(url).generate("r", "hello", CallType::BaselineGeneration).await.unwrap();
    assert_eq!(call.response, "echo: hello");
    assert_eq!((call.prompt_tokens, call.completion_tokens, call.total_tokens), (12, 5, 17));
}

#[tokio::test]
async fn estimates_usage_when_absent() {
    let url = spawn(upstream(false)).await;
    let call = gateway(url).generate("r", "hello", CallType::BaselineGeneration).await.unwrap();
    assert_eq!(call.prompt_tokens, 2);
    assert_eq!(call.completion_tokens, 3);
}

#[tokio::test]
async fn server_errors_are_retried_then_reported() {
    let up = Upstream {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: Some("boom"),
        ..upstream(false)
    };
    let hits = up.hits.clone();
    let url = spawn(up).await;
    let gw = gateway(url);
    let err = gw.generate("r", "hello", CallType::Patch).await.unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert_eq!(gw.log().len(), 1);
}

#[tokio::test]
async fn malformed_body_is_a_protocol_error() {
    let up = Upstream {
        body: Some("{\"unexpected\": true}"),
        ..upstream(false)
    };
    let hits = up.hits.clone();
    let url = spawn(up).await;
    let err = gateway(url).generate("r", "hello", CallType::Patch).await.unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let gw = gateway(format!("http://{addr}"));
    let err = gw.generate("r", "hello", CallType::BaselineGeneration).await.unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)));
    let records = gw.log().records();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].attempts, 3);
}

#[tokio::test]
async fn backend_sends_model_and_user_message() {
    let url = spawn(upstream(true)).await;
    let backend = HttpBackend::new(HttpConfig::new(url, "m")).unwrap();
    let raw = backend
        .post_raw(&json!({ "model": "m", "messages": [{ "role": "user", "content": "x" }] }))
        .await
        .unwrap();
    assert_eq!(raw["model"], "m");
    let completion = backend
        .complete(&CompletionRequest {
            prompt: "ping".into(),
            call_type: CallType::BaselineGeneration,
        })
        .await
        .unwrap();
    assert_eq!(completion.text, "echo: ping");
}
