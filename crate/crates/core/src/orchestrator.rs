//! Request handling: retrieve, verify, patch, stitch, check, repair.
//!
//! For every request the orchestrator retrieves the single most similar
//! cached entry and decides between four mutually exclusive outcomes:
//!
//! * **miss**: nothing cached; generate, segment, store.
//! * **reuse-only**: every cached step verifies; no backend call is made.
//! * **patched**: only the failing steps are regenerated (a suffix for math,
//!   the whole payload for JSON) and stitched onto the verified prefix.
//! * **skip-reuse**: the cached entry is judged unusable (semantic change,
//!   first step wrong, or too many inconsistent steps) and the request is
//!   regenerated in full.
//!
//! The stitched answer always goes through a final integrity check with at
//! most one repair call. Math answers that still fail are replaced by the
//! deterministic solution, so a math request never returns a wrong answer.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::prompts::{
    build_json_patch_prompt, build_json_repair_prompt, build_math_patch_prompt,
    build_math_repair_prompt,
};
use crate::backend::{BackendCall, BackendError, CallType, Gateway};
use crate::metrics::Counters;
use crate::segment::{extract_json_step, segment_generic, stitch, Step, StepKind};
use crate::store::{CacheStore, Constraints, CounterKind, EntryId, RetrievalHit, StoreError, TaskType};
use crate::verify::math::math_answer_check;
use crate::verify::{
    deterministic_solve, final_json_check, final_math_check, json_answer_check, parse_math_prompt,
    verify_json_step, verify_steps, CheckOutcome, JsonConstraint, MathState,
};

/// Default share of inconsistent cached steps at which reuse is abandoned.
pub const DEFAULT_INCONSISTENT_FRACTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub inconsistent_fraction_threshold: f64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            inconsistent_fraction_threshold: DEFAULT_INCONSISTENT_FRACTION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: String,
    pub prompt: String,
    pub constraints: Constraints,
}

impl Request {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, constraints: Constraints) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            constraints,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Miss,
    ReuseOnly,
    Patched,
    SkipReuse,
}

impl Path {
    pub fn as_str(&self) -> &'static str {
        match self {
            Path::Miss => "miss",
            Path::ReuseOnly => "reuse_only",
            Path::Patched => "patched",
            Path::SkipReuse => "skip_reuse",
        }
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a step of the returned answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Reused from the cache after passing verification.
    Cached,
    /// Reused from the cache without any verification (task type `other`).
    CachedUnverified,
    /// Regenerated by a patch or repair call on a cache hit.
    Patched,
    /// Produced by a full generation (miss or skip-reuse).
    Generated,
    /// The deterministic solution.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: String,
    pub path: Path,
    pub answer: String,
    pub steps: Vec<Step>,
    /// One origin per entry of `steps`.
    pub provenance: Vec<Origin>,
    pub calls: Vec<BackendCall>,
    pub steps_reused: usize,
    pub steps_patched: usize,
    pub final_check: CheckOutcome,
    pub quality_check: CheckOutcome,
    /// Seconds.
    pub latency: f64,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved: Option<EntryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inserted: Option<EntryId>,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("math request has no linear equation a*v + b = c")]
    NotMath,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Classifies a request from the backend calls it attempted.
pub fn classify_outcome(attempted: &[CallType], skipped: bool) -> Path {
    if skipped || attempted.contains(&CallType::SkipReuseFallback) {
        Path::SkipReuse
    } else if attempted.contains(&CallType::BaselineGeneration) {
        Path::Miss
    } else if attempted
        .iter()
        .any(|c| matches!(c, CallType::Patch | CallType::Repair))
    {
        Path::Patched
    } else {
        Path::ReuseOnly
    }
}

enum Task<'a> {
    Math(MathState),
    Json(&'a JsonConstraint),
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fresh {
    Miss,
    Skip,
}

/// Per-request call bookkeeping.
struct Trace<'a> {
    gateway: &'a Gateway,
    counters: &'a Counters,
    request_id: &'a str,
    calls: Vec<BackendCall>,
    attempted: Vec<CallType>,
}

impl Trace<'_> {
    async fn call(&mut self, prompt: &str, call_type: CallType) -> Result<BackendCall, BackendError> {
        self.attempted.push(call_type);
        self.counters.call(call_type);
        let result = self.gateway.generate(self.request_id, prompt, call_type).await;
        if let Ok(call) = &result {
            self.calls.push(call.clone());
        }
        result
    }
}

/// The answer under construction.
struct Draft {
    steps: Vec<Step>,
    origins: Vec<Origin>,
    answer: String,
    final_check: CheckOutcome,
    skipped: bool,
    inserted: Option<EntryId>,
}

impl Draft {
    fn json(answer: String, origin: Origin, final_check: CheckOutcome) -> Self {
        Self {
            steps: vec![Step::json(answer.clone())],
            origins: vec![origin],
            answer,
            final_check,
            skipped: false,
            inserted: None,
        }
    }
}

#[derive(Clone)]
pub struct Orchestrator {
    store: Arc<CacheStore>,
    gateway: Gateway,
    counters: Arc<Counters>,
    config: OrchestratorConfig,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("entries", &self.store.len())
            .field("config", &self.config)
            .finish()
    }
}

impl Orchestrator {
    pub fn new(store: Arc<CacheStore>, gateway: Gateway) -> Self {
        Self::with_config(store, gateway, OrchestratorConfig::default())
    }

    pub fn with_config(store: Arc<CacheStore>, gateway: Gateway, config: OrchestratorConfig) -> Self {
        Self {
            store,
            gateway,
            counters: Arc::new(Counters::default()),
            config,
        }
    }

    pub fn store(&self) -> &Arc<CacheStore> {
        &self.store
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn counters(&self) -> &Arc<Counters> {
        &self.counters
    }

    pub fn config(&self) -> OrchestratorConfig {
        self.config
    }

    /// Serves a request through the cache.
    pub async fn handle(&self, request: &Request) -> Result<RequestOutcome, OrchestratorError> {
        self.run(request, false).await
    }

    /// Serves a request as a forced miss: generate and store, ignoring any
    /// cached entries. Used to seed the cache.
    pub async fn handle_miss(&self, request: &Request) -> Result<RequestOutcome, OrchestratorError> {
        self.run(request, true).await
    }

    async fn run(&self, request: &Request, force_miss: bool) -> Result<RequestOutcome, OrchestratorError> {
        let started = Instant::now();
        self.counters.request();
        let result = self.serve(request, force_miss, started).await;
        match &result {
            Ok(outcome) => self.counters.outcome(outcome.path),
            Err(e) => {
                tracing::warn!(request_id = %request.id, error = %e, "request failed");
                self.counters.error();
            }
        }
        result
    }

    async fn serve(
        &self,
        request: &Request,
        force_miss: bool,
        started: Instant,
    ) -> Result<RequestOutcome, OrchestratorError> {
        if request.prompt.trim().is_empty() {
            return Err(OrchestratorError::InvalidRequest("prompt is empty".into()));
        }
        let task = match request.constraints.task_type() {
            TaskType::Math => {
                Task::Math(parse_math_prompt(&request.prompt).map_err(|_| OrchestratorError::NotMath)?)
            }
            TaskType::Json => Task::Json(request.constraints.required_keys()),
            TaskType::Other => Task::Other,
        };
        let mut trace = Trace {
            gateway: &self.gateway,
            counters: &self.counters,
            request_id: &request.id,
            calls: Vec::new(),
            attempted: Vec::new(),
        };

        let hit = if force_miss {
            None
        } else {
            self.store.retrieve_best(&self.store.embed(&request.prompt)?)
        };
        let retrieved = hit.as_ref().map(|h| (h.entry.id, h.similarity));
        let draft = match hit {
            None => self.fresh(&mut trace, request, &task, Fresh::Miss).await?,
            Some(hit) => self.reuse(&mut trace, request, &task, hit).await?,
        };

        let path = classify_outcome(&trace.attempted, draft.skipped);
        if let Some((id, _)) = retrieved {
            self.store.bump(
                id,
                match path {
                    Path::ReuseOnly | Path::Miss => CounterKind::Hit,
                    Path::Patched => CounterKind::Patch,
                    Path::SkipReuse => CounterKind::Skip,
                },
            );
        }
        let quality_check = match &task {
            Task::Math(state) => math_answer_check(&draft.answer, state),
            Task::Json(keys) => json_answer_check(&draft.answer, keys),
            Task::Other => CheckOutcome::Pass,
        };
        let count = |wanted: &[Origin]| draft.origins.iter().filter(|o| wanted.contains(o)).count();
        let tokens = trace.calls.iter().map(|c| c.total_tokens).sum();
        Ok(RequestOutcome {
            request_id: request.id.clone(),
            path,
            steps_reused: count(&[Origin::Cached, Origin::CachedUnverified]),
            steps_patched: count(&[Origin::Patched]),
            answer: draft.answer,
            steps: draft.steps,
            provenance: draft.origins,
            calls: trace.calls,
            final_check: draft.final_check,
            quality_check,
            latency: started.elapsed().as_secs_f64(),
            tokens,
            retrieved: retrieved.map(|(id, _)| id),
            similarity: retrieved.map(|(_, s)| s),
            inserted: draft.inserted,
        })
    }

    /// Stores `steps` as a new entry for `request`; failures are logged and
    /// do not fail the request.
    fn insert(&self, request: &Request, steps: Vec<Step>) -> Option<EntryId> {
        let constraints = request.constraints.clone().with_force_skip(false);
        let stored = self
            .store
            .new_entry(&request.prompt, steps, constraints, &request.id)
            .and_then(|entry| self.store.insert(entry));
        match stored {
            Ok(id) => Some(id),
            Err(e) => {
                tracing::warn!(request_id = %request.id, error = %e, "could not cache response");
                None
            }
        }
    }

    /// Whether the store already holds an entry with the same semantics as
    /// `request`: the same math state, or the same JSON key set.
    fn already_cached(&self, request: &Request, task: &Task<'_>) -> bool {
        let task_type = request.constraints.task_type();
        self.store
            .find(|entry| {
                entry.task_type() == task_type
                    && match task {
                        Task::Math(state) => parse_math_prompt(&entry.prompt).ok() == Some(*state),
                        Task::Json(keys) => entry.constraints.required_keys() == *keys,
                        Task::Other => false,
                    }
            })
            .is_some()
    }

    /// Full generation for a miss or a skip-reuse decision. Skip results are
    /// cached unless their semantics are cached already.
    async fn fresh(
        &self,
        trace: &mut Trace<'_>,
        request: &Request,
        task: &Task<'_>,
        kind: Fresh,
    ) -> Result<Draft, OrchestratorError> {
        let call_type = match kind {
            Fresh::Miss => CallType::BaselineGeneration,
            Fresh::Skip => CallType::SkipReuseFallback,
        };
        let prompt = &request.prompt;
        let store_result = kind == Fresh::Miss || !self.already_cached(request, task);
        let insert = |steps: Vec<Step>| {
            if store_result {
                self.insert(request, steps)
            } else {
                None
            }
        };
        let mut draft = match task {
            Task::Math(state) => {
                let mut inserted = None;
                let steps = match trace.call(prompt, call_type).await {
                    Ok(call) => match segment_generic(&call.response) {
                        Ok(steps) => {
                            inserted = insert(steps.clone());
                            steps
                        }
                        Err(_) => Vec::new(),
                    },
                    Err(e) => {
                        tracing::warn!(request_id = %request.id, error = %e, "generation failed; falling back");
                        Vec::new()
                    }
                };
                let origins = vec![Origin::Generated; steps.len()];
                let mut draft = self
                    .finish_math(trace, prompt, state, steps, origins, Origin::Generated)
                    .await;
                draft.inserted = inserted;
                draft
            }
            Task::Json(keys) => {
                let call = trace.call(prompt, call_type).await?;
                let (answer, repaired, inserted) = match extract_json_step(&call.response) {
                    Ok(step) => {
                        let inserted = insert(vec![step.clone()]);
                        (step.text, false, inserted)
                    }
                    Err(e) => {
                        let reason = format!("parse_error: {e}");
                        let body = build_json_repair_prompt(prompt, keys, &call.response, &reason).body;
                        match trace.call(&body, CallType::Repair).await {
                            Ok(repair) => match extract_json_step(&repair.response) {
                                Ok(step) => {
                                    let inserted = insert(vec![step.clone()]);
                                    (step.text, true, inserted)
                                }
                                Err(_) => (repair.response, true, None),
                            },
                            Err(_) => (call.response, true, None),
                        }
                    }
                };
                let mut draft = self
                    .finish_json(trace, prompt, keys, answer, Origin::Generated, !repaired, Origin::Generated)
                    .await;
                draft.inserted = inserted;
                draft
            }
            Task::Other => {
                let call = trace.call(prompt, call_type).await?;
                let steps = segment_generic(&call.response).unwrap_or_default();
                let inserted = if steps.is_empty() {
                    None
                } else {
                    insert(steps.clone())
                };
                Draft {
                    origins: vec![Origin::Generated; steps.len()],
                    steps,
                    answer: call.response,
                    final_check: CheckOutcome::Pass,
                    skipped: false,
                    inserted,
                }
            }
        };
        draft.skipped = kind == Fresh::Skip;
        Ok(draft)
    }

    async fn skip(
        &self,
        trace: &mut Trace<'_>,
        request: &Request,
        task: &Task<'_>,
        reason: &str,
    ) -> Result<Draft, OrchestratorError> {
        tracing::debug!(request_id = %request.id, reason, "skipping reuse");
        self.fresh(trace, request, task, Fresh::Skip).await
    }

    async fn reuse(
        &self,
        trace: &mut Trace<'_>,
        request: &Request,
        task: &Task<'_>,
        hit: RetrievalHit,
    ) -> Result<Draft, OrchestratorError> {
        let entry = hit.entry;
        if entry.task_type() != request.constraints.task_type() {
            return self.skip(trace, request, task, "task_type_mismatch").await;
        }
        if request.constraints.force_skip_reuse() {
            return self.skip(trace, request, task, "force_skip_reuse").await;
        }
        let prompt = &request.prompt;
        match task {
            Task::Math(state) => {
                if parse_math_prompt(&entry.prompt).ok() != Some(*state) {
                    return self.skip(trace, request, task, "math_state_mismatch").await;
                }
                self.counters.verification();
                let verdict = verify_steps(&entry.steps, state);
                let mut steps = entry.steps;
                let mut origins = vec![Origin::Cached; steps.len()];
                if let Some(first) = verdict.first_inconsistent {
                    if first == 1
                        || verdict.inconsistent_fraction >= self.config.inconsistent_fraction_threshold
                    {
                        return self.skip(trace, request, task, "inconsistent_cached_steps").await;
                    }
                    let body =
                        build_math_patch_prompt(prompt, state, &steps[..first - 1], &steps[first - 1]).body;
                    steps.truncate(first - 1);
                    origins.truncate(first - 1);
                    match trace.call(&body, CallType::Patch).await {
                        Ok(call) => {
                            let suffix = segment_generic(&call.response).unwrap_or_default();
                            append_steps(&mut steps, &mut origins, suffix, Origin::Patched);
                        }
                        Err(e) => {
                            tracing::warn!(request_id = %request.id, error = %e, "patch call failed");
                        }
                    }
                }
                Ok(self
                    .finish_math(trace, prompt, state, steps, origins, Origin::Patched)
                    .await)
            }
            Task::Json(keys) => {
                self.counters.verification();
                let cached = match entry.steps.as_slice() {
                    [only] if only.kind == StepKind::JsonPayload => Some(only),
                    _ => None,
                };
                if let Some(step) = cached.filter(|s| verify_json_step(s, keys).passed()) {
                    return Ok(self
                        .finish_json(trace, prompt, keys, step.text.clone(), Origin::Cached, true, Origin::Patched)
                        .await);
                }
                let cached_json = cached.map(|s| s.text.as_str()).unwrap_or("");
                let body = build_json_patch_prompt(prompt, keys, cached_json).body;
                let call = trace.call(&body, CallType::Patch).await?;
                let answer = extract_json_step(&call.response)
                    .map(|s| s.text)
                    .unwrap_or(call.response);
                Ok(self
                    .finish_json(trace, prompt, keys, answer, Origin::Patched, true, Origin::Patched)
                    .await)
            }
            Task::Other => {
                let steps = entry.steps;
                let answer = stitch(&steps).unwrap_or_default();
                Ok(Draft {
                    origins: vec![Origin::CachedUnverified; steps.len()],
                    steps,
                    answer,
                    final_check: CheckOutcome::Pass,
                    skipped: false,
                    inserted: None,
                })
            }
        }
    }

    /// Final check with one repair, then the deterministic solution.
    async fn finish_math(
        &self,
        trace: &mut Trace<'_>,
        prompt: &str,
        state: &MathState,
        steps: Vec<Step>,
        origins: Vec<Origin>,
        repair_origin: Origin,
    ) -> Draft {
        self.counters.verification();
        let answer = stitch(&steps).unwrap_or_default();
        let check = final_math_check(&answer, state);
        if check.passed() {
            return Draft {
                steps,
                origins,
                answer,
                final_check: check,
                skipped: false,
                inserted: None,
            };
        }

        let keep = origins.iter().take_while(|o| **o == Origin::Cached).count();
        let reason = check.reason().unwrap_or_default();
        let body = build_math_repair_prompt(prompt, state, &steps[..keep], &answer, reason).body;
        if let Ok(call) = trace.call(&body, CallType::Repair).await {
            if let Ok(regenerated) = segment_generic(&call.response) {
                let mut repaired = steps[..keep].to_vec();
                let mut repaired_origins = origins[..keep].to_vec();
                append_steps(&mut repaired, &mut repaired_origins, regenerated, repair_origin);
                self.counters.verification();
                let answer = stitch(&repaired).unwrap_or_default();
                let check = final_math_check(&answer, state);
                if check.passed() {
                    return Draft {
                        steps: repaired,
                        origins: repaired_origins,
                        answer,
                        final_check: check,
                        skipped: false,
                        inserted: None,
                    };
                }
            }
        }

        self.counters.deterministic_fallback();
        let answer = deterministic_solve(state);
        let final_check = final_math_check(&answer, state);
        Draft {
            steps: vec![Step::generic(1, answer.clone())],
            origins: vec![Origin::Fallback],
            answer,
            final_check,
            skipped: false,
            inserted: None,
        }
    }

    /// Final check with at most one repair; a failed repair returns the last
    /// attempt with its failing check.
    #[allow(clippy::too_many_arguments)]
    async fn finish_json(
        &self,
        trace: &mut Trace<'_>,
        prompt: &str,
        keys: &JsonConstraint,
        answer: String,
        origin: Origin,
        repair_allowed: bool,
        repair_origin: Origin,
    ) -> Draft {
        self.counters.verification();
        let check = final_json_check(&answer, keys);
        if check.passed() || !repair_allowed {
            return Draft::json(answer, origin, check);
        }
        let reason = check.reason().unwrap_or_default();
        let body = build_json_repair_prompt(prompt, keys, &answer, reason).body;
        match trace.call(&body, CallType::Repair).await {
            Ok(call) => {
                let repaired = extract_json_step(&call.response)
                    .map(|s| s.text)
                    .unwrap_or(call.response);
                self.counters.verification();
                let check = final_json_check(&repaired, keys);
                Draft::json(repaired, repair_origin, check)
            }
            Err(e) => {
                tracing::warn!(error = %e, "json repair call failed");
                Draft::json(answer, origin, check)
            }
        }
    }
}

/// Appends `extra` to `steps`, renumbering so indices stay contiguous.
fn append_steps(steps: &mut Vec<Step>, origins: &mut Vec<Origin>, extra: Vec<Step>, origin: Origin) {
    for step in extra {
        let index = steps.len() + 1;
        steps.push(Step { index, ..step });
        origins.push(origin);
    }
}
