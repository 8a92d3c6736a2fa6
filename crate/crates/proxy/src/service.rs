//! HTTP handlers for the chat-completions endpoint and the stats endpoint.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stepcache::backend::{
    Backend, BackendError, CallType, CompletionRequest, Gateway, HttpBackend, SimBackend,
    SimConfig,
};
use stepcache::metrics::{RecordPath, RequestRecord, RunStats};
use stepcache::store::{CacheStore, StoreConfig, StoreError, TaskType, TrigramEmbedder};
use stepcache::verify::JsonConstraint;
use stepcache::{
    Constraints, Orchestrator, OrchestratorConfig, OrchestratorError, Request, RequestOutcome,
};
use tokio::net::TcpListener;

use crate::config::{ConfigError, ServiceConfig};

/// Header consulted for the task type when the body has no extension field.
pub const TASK_HEADER: &str = "x-stepcache-task-type";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cache file: {0}")]
    Store(#[from] StoreError),
    #[error("upstream client: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

enum Upstream {
    Sim(Arc<SimBackend>),
    Http(Arc<HttpBackend>),
}

impl Upstream {
    fn backend(&self) -> Arc<dyn Backend> {
        match self {
            Upstream::Sim(b) => b.clone(),
            Upstream::Http(b) => b.clone(),
        }
    }
}

struct AppState {
    config: ServiceConfig,
    orchestrator: Orchestrator,
    upstream: Upstream,
    stats: RunStats,
    direct: AtomicU64,
    next_id: AtomicU64,
}

/// A configured service: cache, orchestrator and upstream client.
#[derive(Clone)]
pub struct Service {
    state: Arc<AppState>,
}

/// The optional `stepcache` field of a chat-completions body.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct Extension {
    task_type: Option<TaskType>,
    required_keys: Vec<String>,
    force_skip_reuse: bool,
}

#[derive(Debug, Serialize)]
struct ExtensionBlock<'a> {
    path: &'a str,
    steps_reused: usize,
    steps_patched: usize,
    provenance: &'a [stepcache::Origin],
}

#[derive(Debug, Serialize)]
pub struct StatsBody {
    pub requests: u64,
    /// Requests with a final outcome: cache paths, direct forwards and errors.
    pub completed: u64,
    pub direct: u64,
    pub cache_entries: usize,
    pub counters: stepcache::metrics::CounterSnapshot,
    pub aggregates: Option<stepcache::metrics::Aggregates>,
}

struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    request_id: Option<String>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "invalid_request",
            message: message.into(),
            request_id: None,
        }
    }

    fn upstream(error: &BackendError) -> Self {
        Self {
            status: StatusCode::BAD_GATEWAY,
            kind: "upstream_unavailable",
            message: error.to_string(),
            request_id: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {
                "type": self.kind,
                "message": self.message,
                "request_id": self.request_id,
            }
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match &e {
            OrchestratorError::Backend(b) => ApiError::upstream(b),
            OrchestratorError::InvalidRequest(_) | OrchestratorError::NotMath => {
                ApiError::bad_request(e.to_string())
            }
            OrchestratorError::Store(_) => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                kind: "cache_error",
                message: e.to_string(),
                request_id: None,
            },
        }
    }
}

/// Joins the text of every message, in order, into the cache prompt.
fn prompt_from_messages(body: &Value) -> Result<String, ApiError> {
    let messages = body
        .get("messages")
        .and_then(Value::as_array)
        .ok_or_else(|| ApiError::bad_request("body needs a \"messages\" array"))?;
    let mut parts = Vec::new();
    for message in messages {
        match message.get("content") {
            Some(Value::String(text)) => parts.push(text.clone()),
            Some(Value::Array(items)) => parts.extend(
                items
                    .iter()
                    .filter_map(|item| item.get("text").and_then(Value::as_str))
                    .map(str::to_string),
            ),
            Some(Value::Null) | None => {}
            Some(_) => return Err(ApiError::bad_request("message content must be text")),
        }
    }
    let prompt = parts.join("\n\n");
    if prompt.trim().is_empty() {
        return Err(ApiError::bad_request("messages carry no text"));
    }
    Ok(prompt)
}

fn constraints_for(body: &Value, headers: &HeaderMap, default_task: TaskType) -> Result<Constraints, ApiError> {
    let ext: Extension = match body.get("stepcache") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| ApiError::bad_request(format!("stepcache extension: {e}")))?,
        None => Extension::default(),
    };
    let header_task = match headers.get(TASK_HEADER) {
        Some(v) => {
            let name = v.to_str().unwrap_or_default().trim().to_ascii_lowercase();
            Some(
                serde_json::from_value::<TaskType>(Value::String(name.clone()))
                    .map_err(|_| ApiError::bad_request(format!("unknown task type {name:?}")))?,
            )
        }
        None => None,
    };
    let task = ext.task_type.or(header_task).unwrap_or(default_task);
    let constraints = match task {
        TaskType::Json => Constraints::json(JsonConstraint::new(ext.required_keys)),
        other => Constraints::of(other),
    };
    Ok(constraints.with_force_skip(ext.force_skip_reuse))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default()
}

fn chat_response(id: &str, model: &str, content: &str, prompt_tokens: u64, completion_tokens: u64) -> Value {
    json!({
        "id": id,
        "object": "chat.completion",
        "created": unix_now(),
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    })
}

impl Service {
    /// Builds the service, restoring the cache file when it exists.
    pub fn new(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let embedder = Arc::new(TrigramEmbedder::default());
        let store = match &config.cache_file {
            Some(path) if path.exists() => {
                let store = CacheStore::restore(path, embedder, StoreConfig::default())?;
                tracing::info!(entries = store.len(), path = %path.display(), "restored cache");
                store
            }
            _ => CacheStore::new(embedder),
        };
        let upstream = if config.is_sim() {
            Upstream::Sim(Arc::new(SimBackend::new(SimConfig::default())))
        } else {
            Upstream::Http(Arc::new(HttpBackend::new(config.http())?))
        };
        let orchestrator = Orchestrator::with_config(
            Arc::new(store),
            Gateway::new(upstream.backend()),
            OrchestratorConfig {
                inconsistent_fraction_threshold: config.inconsistent_fraction_threshold,
            },
        );
        Ok(Self {
            state: Arc::new(AppState {
                config,
                orchestrator,
                upstream,
                stats: RunStats::default(),
                direct: AtomicU64::new(0),
                next_id: AtomicU64::new(0),
            }),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.state.config
    }

    pub fn store(&self) -> &Arc<CacheStore> {
        self.state.orchestrator.store()
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/v1/chat/completions", post(chat_completions))
            .route("/stats", get(stats))
            .with_state(self.state.clone())
    }

    pub fn stats(&self) -> StatsBody {
        stats_body(&self.state)
    }

    /// Writes the cache file, if one is configured.
    pub fn persist(&self) -> Result<(), ServiceError> {
        if let Some(path) = &self.state.config.cache_file {
            self.store().persist(path)?;
            tracing::info!(entries = self.store().len(), path = %path.display(), "persisted cache");
        }
        Ok(())
    }

    /// Serves on `listener` until `shutdown` resolves, then persists the cache.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), ServiceError> {
        axum::serve(listener, self.router())
            .with_graceful_shutdown(shutdown)
            .await?;
        self.persist()
    }
}

fn stats_body(state: &AppState) -> StatsBody {
    let counters = state.orchestrator.counters().snapshot();
    let direct = state.direct.load(Ordering::Relaxed);
    StatsBody {
        requests: counters.requests,
        completed: counters.completed() + direct,
        direct,
        cache_entries: state.orchestrator.store().len(),
        counters,
        aggregates: state.stats.aggregate().ok(),
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<StatsBody> {
    Json(stats_body(&state))
}

async fn chat_completions(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let request_id = format!("req-{n}");
    let counters = state.orchestrator.counters();
    let started = Instant::now();

    let parsed = serde_json::from_slice::<Value>(&body)
        .map_err(|e| ApiError::bad_request(format!("body is not JSON: {e}")))
        .and_then(|body| {
            let prompt = prompt_from_messages(&body)?;
            let constraints = constraints_for(&body, &headers, state.config.default_task)?;
            Ok((body, prompt, constraints))
        });
    let (mut body, prompt, constraints) = match parsed {
        Ok(p) => p,
        Err(mut e) => {
            counters.request();
            counters.error();
            state.stats.record(error_record(&request_id, TaskType::Other, started, &e.message));
            e.request_id = Some(request_id);
            return e.into_response();
        }
    };

    if !state.config.caching {
        counters.request();
        if let Some(obj) = body.as_object_mut() {
            obj.remove("stepcache");
        }
        return forward(&state, &request_id, &body, &prompt, constraints.task_type(), started).await;
    }

    let request = Request::new(&request_id, prompt, constraints.clone());
    match state.orchestrator.handle(&request).await {
        Ok(outcome) => {
            state.stats.record(outcome_record(&outcome, constraints.task_type()));
            let model = body
                .get("model")
                .and_then(Value::as_str)
                .unwrap_or(&state.config.model)
                .to_string();
            Json(cached_response(&outcome, &model)).into_response()
        }
        Err(e) => {
            let message = e.to_string();
            state.stats.record(error_record(&request_id, constraints.task_type(), started, &message));
            let mut error = ApiError::from(e);
            error.request_id = Some(request_id);
            error.into_response()
        }
    }
}

fn cached_response(outcome: &RequestOutcome, model: &str) -> Value {
    let prompt_tokens = outcome.calls.iter().map(|c| c.prompt_tokens).sum();
    let completion_tokens = outcome.calls.iter().map(|c| c.completion_tokens).sum();
    let mut response = chat_response(
        &format!("stepcache-{}", outcome.request_id),
        model,
        &outcome.answer,
        prompt_tokens,
        completion_tokens,
    );
    response["stepcache"] = json!(ExtensionBlock {
        path: outcome.path.as_str(),
        steps_reused: outcome.steps_reused,
        steps_patched: outcome.steps_patched,
        provenance: &outcome.provenance,
    });
    response
}

/// Caching disabled: hand the body to the upstream and relay its reply.
async fn forward(
    state: &AppState,
    request_id: &str,
    body: &Value,
    prompt: &str,
    task: TaskType,
    started: Instant,
) -> Response {
    let result = match &state.upstream {
        Upstream::Http(http) => {
            let bytes = serde_json::to_vec(body).unwrap_or_default();
            http.forward(bytes).await.map(|(status, bytes)| {
                let status = StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY);
                (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
            })
        }
        Upstream::Sim(sim) => {
            let request = CompletionRequest {
                prompt: prompt.to_string(),
                call_type: CallType::BaselineGeneration,
            };
            sim.complete(&request).await.map(|completion| {
                let (p, c) = completion
                    .usage
                    .map(|u| (u.prompt_tokens, u.completion_tokens))
                    .unwrap_or_default();
                let model = body.get("model").and_then(Value::as_str).unwrap_or(&state.config.model);
                Json(chat_response(&format!("direct-{request_id}"), model, &completion.text, p, c))
                    .into_response()
            })
        }
    };
    match result {
        Ok(response) => {
            state.direct.fetch_add(1, Ordering::Relaxed);
            state.stats.record(RequestRecord {
                request_id: request_id.to_string(),
                task,
                perturbation: String::new(),
                path: RecordPath::Direct,
                latency: started.elapsed().as_secs_f64(),
                tokens: 0,
                quality_pass: true,
                final_pass: true,
                error: None,
            });
            response
        }
        Err(e) => {
            state.orchestrator.counters().error();
            state.stats.record(error_record(request_id, task, started, &e.to_string()));
            let mut error = ApiError::upstream(&e);
            error.request_id = Some(request_id.to_string());
            error.into_response()
        }
    }
}

fn outcome_record(outcome: &RequestOutcome, task: TaskType) -> RequestRecord {
    RequestRecord {
        request_id: outcome.request_id.clone(),
        task,
        perturbation: String::new(),
        path: outcome.path.into(),
        latency: outcome.latency,
        tokens: outcome.tokens,
        quality_pass: outcome.quality_check.passed(),
        final_pass: outcome.final_check.passed(),
        error: None,
    }
}

fn error_record(request_id: &str, task: TaskType, started: Instant, message: &str) -> RequestRecord {
    RequestRecord {
        request_id: request_id.to_string(),
        task,
        perturbation: String::new(),
        path: RecordPath::Error,
        latency: started.elapsed().as_secs_f64(),
        tokens: 0,
        quality_pass: false,
        final_pass: false,
        error: Some(message.to_string()),
    }
}
