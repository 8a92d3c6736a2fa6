//! Baseline and StepCache arms.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stepcache::backend::{Backend, CallLog, CallRecord, CallType, Gateway, GatewayConfig};
use stepcache::metrics::{aggregate, Aggregates, CounterSnapshot, RecordPath, RequestRecord};
use stepcache::store::{CacheStore, TaskType, TrigramEmbedder};
use stepcache::verify::math::math_answer_check;
use stepcache::verify::{
    final_json_check, final_math_check, json_answer_check, parse_math_prompt, CheckOutcome,
};
use stepcache::{Orchestrator, OrchestratorConfig, Request, RequestOutcome};

use crate::suite::{BenchCase, Suite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Stepcache,
}

/// A request where the answer-level check and the integrity check disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub request_id: String,
    pub prompt: String,
    pub quality_check: CheckOutcome,
    pub final_check: CheckOutcome,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub records: Vec<RequestRecord>,
    pub aggregates: Aggregates,
    /// Every backend call of the arm, warmup included.
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counters: Option<CounterSnapshot>,
}

impl ArmResult {
    /// Calls made on behalf of evaluation requests (warmup excluded).
    pub fn evaluation_calls(&self) -> Vec<&CallRecord> {
        let ids: HashSet<&str> = self.records.iter().map(|r| r.request_id.as_str()).collect();
        self.calls
            .iter()
            .filter(|c| ids.contains(c.request_id.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepcacheRun {
    pub result: ArmResult,
    pub outcomes: Vec<RequestOutcome>,
    pub mismatches: Vec<Mismatch>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("suite has no evaluation cases")]
    EmptySuite,
}

fn checks(case: &BenchCase, answer: &str) -> (CheckOutcome, CheckOutcome) {
    match case.task {
        TaskType::Math => match parse_math_prompt(&case.prompt) {
            Ok(state) => (math_answer_check(answer, &state), final_math_check(answer, &state)),
            Err(_) => (CheckOutcome::fail("not_math"), CheckOutcome::fail("not_math")),
        },
        TaskType::Json => {
            let keys = case.constraints.required_keys();
            (json_answer_check(answer, keys), final_json_check(answer, keys))
        }
        TaskType::Other => (CheckOutcome::Pass, CheckOutcome::Pass),
    }
}

fn record(case: &BenchCase, path: RecordPath, latency: f64, tokens: u64) -> RequestRecord {
    RequestRecord {
        request_id: case.id.clone(),
        task: case.task,
        perturbation: case.perturbation.to_string(),
        path,
        latency,
        tokens,
        quality_pass: false,
        final_pass: false,
        error: None,
    }
}

fn gateway(backend: Arc<dyn Backend>, config: GatewayConfig) -> (Gateway, Arc<CallLog>) {
    let log = Arc::new(CallLog::default());
    (Gateway::with_config(backend, config, log.clone()), log)
}

/// Sends every evaluation prompt straight to the backend.
pub async fn run_baseline(
    suite: &Suite,
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
) -> Result<ArmResult, RunError> {
    let (gateway, log) = gateway(backend, config);
    let mut records = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        let started = Instant::now();
        let result = gateway
            .generate(&case.id, &case.prompt, CallType::BaselineGeneration)
            .await;
        let latency = started.elapsed().as_secs_f64();
        let rec = match result {
            Ok(call) => {
                let (quality, integrity) = checks(case, &call.response);
                RequestRecord {
                    quality_pass: quality.passed(),
                    final_pass: integrity.passed(),
                    ..record(case, RecordPath::Direct, latency, call.total_tokens)
                }
            }
            Err(e) => RequestRecord {
                error: Some(e.to_string()),
                ..record(case, RecordPath::Error, latency, 0)
            },
        };
        records.push(rec);
    }
    let aggregates = aggregate(&records).map_err(|_| RunError::EmptySuite)?;
    Ok(ArmResult {
        records,
        aggregates,
        calls: log.records(),
        counters: None,
    })
}

/// Seeds an empty cache with the warmup prompts, then serves every
/// evaluation case through the orchestrator.
pub async fn run_stepcache(
    suite: &Suite,
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    orchestrator_config: OrchestratorConfig,
) -> Result<StepcacheRun, RunError> {
    let (gateway, log) = gateway(backend, config);
    let store = Arc::new(CacheStore::new(Arc::new(TrigramEmbedder::default())));
    let orchestrator = Orchestrator::with_config(store, gateway, orchestrator_config);

    for case in &suite.warmup {
        let request = Request::new(&case.id, &case.prompt, case.constraints.clone());
        if let Err(e) = orchestrator.handle_miss(&request).await {
            tracing::warn!(request_id = %case.id, error = %e, "warmup request failed");
        }
    }

    let mut records = Vec::with_capacity(suite.cases.len());
    let mut outcomes = Vec::with_capacity(suite.cases.len());
    let mut mismatches = Vec::new();
    for case in &suite.cases {
        let request = Request::new(&case.id, &case.prompt, case.constraints.clone());
        let started = Instant::now();
        let result = orchestrator.handle(&request).await;
        let latency = started.elapsed().as_secs_f64();
        match result {
            Ok(outcome) => {
                let (quality, integrity) = checks(case, &outcome.answer);
                if quality.passed() != integrity.passed() {
                    let reason = quality
                        .reason()
                        .or(integrity.reason())
                        .unwrap_or_default()
                        .to_string();
                    mismatches.push(Mismatch {
                        request_id: case.id.clone(),
                        prompt: case.prompt.clone(),
                        quality_check: quality.clone(),
                        final_check: integrity.clone(),
                        reason,
                    });
                }
                records.push(RequestRecord {
                    quality_pass: quality.passed(),
                    final_pass: integrity.passed(),
                    ..record(case, outcome.path.into(), latency, outcome.tokens)
                });
                outcomes.push(outcome);
            }
            Err(e) => records.push(RequestRecord {
                error: Some(e.to_string()),
                ..record(case, RecordPath::Error, latency, 0)
            }),
        }
    }
    let aggregates = aggregate(&records).map_err(|_| RunError::EmptySuite)?;
    Ok(StepcacheRun {
        result: ArmResult {
            records,
            aggregates,
            calls: log.records(),
            counters: Some(orchestrator.counters().snapshot()),
        },
        outcomes,
        mismatches,
    })
}
