//! Perturbation benchmark for `stepcache`.
//!
//! A run generates a seeded suite of math and JSON prompts with paraphrase,
//! value-change and key-change perturbations, serves it once directly against
//! the backend (baseline arm) and once through the cache after a warmup pass
//! (StepCache arm), and reports latency, tokens, outcome split and check pass
//! rates per arm and per (task, perturbation) cell.

pub mod report;
pub mod run;
pub mod suite;

use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use stepcache::backend::{Backend, FaultConfig, GatewayConfig, HttpBackend, HttpConfig, SimBackend, SimConfig};
use stepcache::OrchestratorConfig;

pub use report::{breakdown, write_reports, BenchmarkResults, BreakdownRow};
pub use run::{run_baseline, run_stepcache, Arm, ArmResult, Mismatch, StepcacheRun};
pub use suite::{generate_suite, BenchCase, Perturbation, Suite, SuiteError};

#[derive(Debug, Clone)]
pub enum BackendChoice {
    Sim(SimConfig),
    Http(HttpConfig),
}

impl BackendChoice {
    fn build(&self) -> anyhow::Result<Arc<dyn Backend>> {
        Ok(match self {
            BackendChoice::Sim(config) => Arc::new(SimBackend::new(config.clone())),
            BackendChoice::Http(config) => Arc::new(HttpBackend::new(config.clone())?),
        })
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            BackendChoice::Sim(config) => json!({
                "kind": "sim",
                "seed": config.seed,
                "latency_ms": config.latency.as_secs_f64() * 1000.0,
                "faults": config.faults,
            }),
            BackendChoice::Http(config) => json!({
                "kind": "http",
                "base_url": config.base_url,
                "model": config.model,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_base: usize,
    pub k: usize,
    pub seed: u64,
    pub include_code: bool,
    pub backend: BackendChoice,
    pub gateway: GatewayConfig,
    pub orchestrator: OrchestratorConfig,
}

impl BenchConfig {
    /// The default `(n, k)` suite against a correct simulator.
    pub fn sim(n_base: usize, k: usize, seed: u64) -> Self {
        Self::sim_with(n_base, k, seed, FaultConfig::default(), Duration::ZERO)
    }

    pub fn sim_with(n_base: usize, k: usize, seed: u64, faults: FaultConfig, latency: Duration) -> Self {
        Self {
            n_base,
            k,
            seed,
            include_code: false,
            backend: BackendChoice::Sim(SimConfig {
                seed,
                faults,
                latency,
                ..SimConfig::default()
            }),
            gateway: GatewayConfig {
                retries: 2,
                retry_backoff: Duration::ZERO,
            },
            orchestrator: OrchestratorConfig::default(),
        }
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "n": self.n_base,
            "k": self.k,
            "seed": self.seed,
            "include_code": self.include_code,
            "mode": "verify_patch",
            "backend": self.backend.describe(),
            "retries": self.gateway.retries,
            "inconsistent_fraction_threshold": self.orchestrator.inconsistent_fraction_threshold,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub suite: Suite,
    pub stepcache: StepcacheRun,
    pub results: BenchmarkResults,
}

/// Generates the suite and runs both arms against fresh backends.
pub async fn run_benchmark(config: &BenchConfig) -> anyhow::Result<BenchmarkOutput> {
    let suite = generate_suite(config.n_base, config.k, config.seed, config.include_code)?;
    let baseline = run_baseline(&suite, config.backend.build()?, config.gateway).await?;
    let stepcache = run_stepcache(
        &suite,
        config.backend.build()?,
        config.gateway,
        config.orchestrator,
    )
    .await?;
    let rows = breakdown(&baseline.records, &stepcache.result.records);
    let mut cfg = config.describe();
    cfg["evaluation_requests"] = json!(suite.cases.len());
    cfg["warmup_requests"] = json!(suite.warmup.len());
    let results = BenchmarkResults {
        config: cfg,
        arms: report::Arms {
            baseline,
            stepcache: stepcache.result.clone(),
        },
        breakdown: rows,
    };
    Ok(BenchmarkOutput {
        suite,
        stepcache,
        results,
    })
}
