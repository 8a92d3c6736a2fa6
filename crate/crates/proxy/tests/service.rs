use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};
use stepcache_proxy::{Service, ServiceConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

struct Running {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    handle: JoinHandle<Result<(), stepcache_proxy::ServiceError>>,
}

impl Running {
    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    async fn shutdown(self) {
        self.stop.send(()).unwrap();
        self.handle.await.unwrap().unwrap();
    }
}

async fn start(config: ServiceConfig) -> Running {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let service = Service::new(ServiceConfig { listen: addr, ..config }).unwrap();
    let (stop, rx) = oneshot::channel();
    let handle = tokio::spawn(service.serve(listener, async {
        let _ = rx.await;
    }));
    Running { addr, stop, handle }
}

async fn chat(client: &reqwest::Client, running: &Running, body: Value) -> (u16, Value) {
    let response = client
        .post(running.url("/v1/chat/completions"))
        .json(&body)
        .send()
        .await
        .unwrap();
    let status = response.status().as_u16();
    (status, response.json().await.unwrap())
}

fn user(content: &str) -> Value {
    json!([{"role": "user", "content": content}])
}

async fn dead_upstream() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

#[tokio::test]
async fn repeated_math_prompt_is_served_from_cache() {
    let running = start(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    let body = json!({
        "model": "m",
        "messages": user("Solve 2x + 3 = 13 for x."),
        "stepcache": {"task_type": "math"},
    });

    let (status, first) = chat(&client, &running, body.clone()).await;
    assert_eq!(status, 200, "{first}");
    assert_eq!(first["stepcache"]["path"], "miss");
    assert_eq!(first["object"], "chat.completion");
    assert!(first["choices"][0]["message"]["content"].as_str().unwrap().ends_with("x = 5"));

    let (_, second) = chat(&client, &running, body).await;
    assert_eq!(second["stepcache"]["path"], "reuse_only");
    assert_eq!(second["stepcache"]["steps_patched"], 0);
    let reused = second["stepcache"]["steps_reused"].as_u64().unwrap();
    assert!(reused > 0);
    let provenance = second["stepcache"]["provenance"].as_array().unwrap();
    assert_eq!(provenance.len() as u64, reused);
    assert!(provenance.iter().all(|p| p == "cached"));
    assert_eq!(second["usage"]["total_tokens"], 0);
    running.shutdown().await;
}

#[tokio::test]
async fn requests_without_extension_are_other_tasks() {
    let running = start(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    let body = json!({"messages": user("Solve 2x + 3 = 13 for x.")});
    chat(&client, &running, body.clone()).await;
    let (_, second) = chat(&client, &running, body).await;
    assert_eq!(second["stepcache"]["path"], "reuse_only");
    let provenance = second["stepcache"]["provenance"].as_array().unwrap();
    assert!(provenance.iter().all(|p| p == "cached_unverified"), "{provenance:?}");
    running.shutdown().await;
}

#[tokio::test]
async fn task_header_routes_when_body_has_no_extension() {
    let running = start(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    for _ in 0..2 {
        client
            .post(running.url("/v1/chat/completions"))
            .header(stepcache_proxy::TASK_HEADER, "math")
            .json(&json!({"messages": user("Solve 3y + 1 = 10 for y.")}))
            .send()
            .await
            .unwrap();
    }
    let response: Value = client
        .post(running.url("/v1/chat/completions"))
        .header(stepcache_proxy::TASK_HEADER, "math")
        .json(&json!({"messages": user("Solve 3y + 1 = 10 for y.")}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(response["stepcache"]["provenance"][0], "cached");
    running.shutdown().await;
}

#[tokio::test]
async fn json_keys_change_is_patched() {
    let running = start(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    let (_, first) = chat(
        &client,
        &running,
        json!({
            "messages": user("Return a JSON object with the keys: name, city."),
            "stepcache": {"task_type": "json", "required_keys": ["name", "city"]},
        }),
    )
    .await;
    assert_eq!(first["stepcache"]["path"], "miss");
    let (_, second) = chat(
        &client,
        &running,
        json!({
            "messages": user("Return a JSON object with the keys: name, city, score."),
            "stepcache": {"task_type": "json", "required_keys": ["name", "city", "score"]},
        }),
    )
    .await;
    assert_eq!(second["stepcache"]["path"], "patched");
    let content: Value =
        serde_json::from_str(second["choices"][0]["message"]["content"].as_str().unwrap()).unwrap();
    for key in ["name", "city", "score"] {
        assert!(content.get(key).is_some(), "{content}");
    }
    running.shutdown().await;
}

#[tokio::test]
async fn stats_totals_match_request_count() {
    let running = start(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    let bodies = [
        json!({"messages": user("Solve 2x + 3 = 13 for x."), "stepcache": {"task_type": "math"}}),
        json!({"messages": user("Solve 2x + 3 = 13 for x."), "stepcache": {"task_type": "math"}}),
        json!({"messages": user("Solve 2x + 3 = 15 for x."), "stepcache": {"task_type": "math"}}),
        json!({"messages": user("Say hello.")}),
        json!({"messages": user("No equation here."), "stepcache": {"task_type": "math"}}),
        json!({"no_messages": true}),
        json!({"messages": user("Solve 2x + 3 = 13 for x."), "stepcache": {"task_type": "math", "force_skip_reuse": true}}),
    ];
    let mut statuses = Vec::new();
    for body in &bodies {
        statuses.push(chat(&client, &running, body.clone()).await.0);
    }
    assert_eq!(statuses, [200, 200, 200, 200, 400, 400, 200]);

    let stats: Value = client.get(running.url("/stats")).send().await.unwrap().json().await.unwrap();
    let c = &stats["counters"];
    let sum = ["miss", "reuse_only", "patched", "skip_reuse", "errors"]
        .iter()
        .map(|k| c[k].as_u64().unwrap())
        .sum::<u64>();
    assert_eq!(sum, bodies.len() as u64, "{stats}");
    assert_eq!(stats["requests"], bodies.len() as u64);
    assert_eq!(stats["completed"], bodies.len() as u64);
    assert_eq!(c["errors"], 2);
    assert_eq!(c["reuse_only"], 1);
    assert_eq!(c["skip_reuse"], 3);
    assert_eq!(c["miss"], 1);
    assert_eq!(stats["aggregates"]["requests"], bodies.len() as u64);
    running.shutdown().await;
}

#[tokio::test]
async fn upstream_outage_fails_generation_but_not_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let cache_file = dir.path().join("cache.jsonl");
    let warm = start(ServiceConfig {
        cache_file: Some(cache_file.clone()),
        ..ServiceConfig::default()
    })
    .await;
    let client = reqwest::Client::new();
    let cached = json!({"messages": user("Describe the weather on Mars.")});
    chat(&client, &warm, cached.clone()).await;
    warm.shutdown().await;

    let running = start(ServiceConfig {
        upstream: dead_upstream().await,
        cache_file: Some(cache_file),
        timeout_secs: 2.0,
        ..ServiceConfig::default()
    })
    .await;
    let (status, body) = chat(&client, &running, cached).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["stepcache"]["path"], "reuse_only");

    let (status, body) = chat(
        &client,
        &running,
        json!({
            "messages": user("Return a JSON object with the keys: alpha."),
            "stepcache": {"task_type": "json", "required_keys": ["alpha"]},
        }),
    )
    .await;
    assert_eq!(status, 502);
    assert_eq!(body["error"]["type"], "upstream_unavailable");
    assert!(body["error"]["request_id"].is_string());
    running.shutdown().await;
}

#[tokio::test]
async fn shutdown_persists_and_restart_restores() {
    let dir = tempfile::tempdir().unwrap();
    let cache_file = dir.path().join("cache.jsonl");
    let config = ServiceConfig {
        cache_file: Some(cache_file.clone()),
        ..ServiceConfig::default()
    };
    let client = reqwest::Client::new();
    let body = json!({"messages": user("Solve 4z + 1 = 9 for z."), "stepcache": {"task_type": "math"}});

    let first = start(config.clone()).await;
    assert_eq!(chat(&client, &first, body.clone()).await.1["stepcache"]["path"], "miss");
    first.shutdown().await;
    assert!(cache_file.exists());

    let restarted = Service::new(config.clone()).unwrap();
    assert_eq!(restarted.store().len(), 1);
    let second = start(config).await;
    assert_eq!(chat(&client, &second, body).await.1["stepcache"]["path"], "reuse_only");
    second.shutdown().await;
}

#[tokio::test]
async fn disabled_caching_relays_upstream_bytes() {
    const UPSTREAM_REPLY: &str =
        r#"{"usage":{"total_tokens":3},"id":"up-1","choices":[{"message":{"content":"hi","role":"assistant"},"index":0}],"zeta":1.50}"#;
    let seen = Arc::new(Mutex::new(Vec::<Value>::new()));
    let recorder = seen.clone();
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |body: axum::Json<Value>| {
            let recorder = recorder.clone();
            async move {
                recorder.lock().unwrap().push(body.0);
                ([(axum::http::header::CONTENT_TYPE, "application/json")], UPSTREAM_REPLY)
            }
        }),
    );
    let upstream = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let upstream_addr = upstream.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(upstream, app).await.unwrap() });

    let running = start(ServiceConfig {
        upstream: format!("http://{upstream_addr}"),
        caching: false,
        ..ServiceConfig::default()
    })
    .await;
    let client = reqwest::Client::new();
    for _ in 0..2 {
        let text = client
            .post(running.url("/v1/chat/completions"))
            .json(&json!({"model": "m", "messages": user("hello"), "stepcache": {"task_type": "math"}}))
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap();
        assert_eq!(text, UPSTREAM_REPLY);
    }
    let forwarded = seen.lock().unwrap().clone();
    assert_eq!(forwarded.len(), 2);
    assert!(forwarded.iter().all(|b| b.get("stepcache").is_none() && b["model"] == "m"));

    let stats: Value = client.get(running.url("/stats")).send().await.unwrap().json().await.unwrap();
    assert_eq!(stats["direct"], 2);
    assert_eq!(stats["completed"], 2);
    running.shutdown().await;
}
