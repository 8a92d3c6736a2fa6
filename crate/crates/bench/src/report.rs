//! `benchmark_results.json`, `benchmark_mismatches.json` and the multi-seed
//! summary.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stepcache::metrics::{spread, RecordPath, RequestRecord, Spread};
use stepcache::store::TaskType;

use crate::run::{ArmResult, Mismatch};
use crate::suite::Perturbation;

pub const RESULTS_FILE: &str = "benchmark_results.json";
pub const MISMATCHES_FILE: &str = "benchmark_mismatches.json";
pub const SEED_SUMMARY_FILE: &str = "seed_summary.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Arms {
    pub baseline: ArmResult,
    pub stepcache: ArmResult,
}

/// One (task, perturbation) cell of the outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub task: TaskType,
    pub perturbation: String,
    pub requests: usize,
    pub reuse_only_pct: f64,
    pub patch_pct: f64,
    pub skip_pct: f64,
    pub miss_pct: f64,
    /// Mean baseline tokens minus mean StepCache tokens, rounded.
    pub tokens_saved: i64,
    /// StepCache final-check pass rate.
    pub final_pct: f64,
    pub baseline_final_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub config: Value,
    pub arms: Arms,
    pub breakdown: Vec<BreakdownRow>,
}

fn share(records: &[&RequestRecord], pred: impl Fn(&RequestRecord) -> bool) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    100.0 * records.iter().filter(|r| pred(r)).count() as f64 / records.len() as f64
}

fn mean_tokens(records: &[&RequestRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.tokens as f64).sum::<f64>() / records.len() as f64
}

/// Per-cell outcome split, in table order (math cells, then json cells).
pub fn breakdown(baseline: &[RequestRecord], stepcache: &[RequestRecord]) -> Vec<BreakdownRow> {
    let mut rows = Vec::new();
    for task in [TaskType::Math, TaskType::Json] {
        for kind in Perturbation::kinds_for(task) {
            let in_cell = |r: &&RequestRecord| r.task == task && r.perturbation == kind.as_str();
            let sc: Vec<&RequestRecord> = stepcache.iter().filter(in_cell).collect();
            let base: Vec<&RequestRecord> = baseline.iter().filter(in_cell).collect();
            if sc.is_empty() && base.is_empty() {
                continue;
            }
            rows.push(BreakdownRow {
                task,
                perturbation: kind.to_string(),
                requests: sc.len(),
                reuse_only_pct: share(&sc, |r| r.path == RecordPath::ReuseOnly),
                patch_pct: share(&sc, |r| r.path == RecordPath::Patched),
                skip_pct: share(&sc, |r| r.path == RecordPath::SkipReuse),
                miss_pct: share(&sc, |r| r.path == RecordPath::Miss),
                tokens_saved: (mean_tokens(&base) - mean_tokens(&sc)).round() as i64,
                final_pct: share(&sc, |r| r.final_pass),
                baseline_final_pct: share(&base, |r| r.final_pass),
            });
        }
    }
    rows
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

pub fn write_reports(
    results: &BenchmarkResults,
    mismatches: &[Mismatch],
    out_dir: impl AsRef<Path>,
) -> io::Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(&dir.join(RESULTS_FILE), results)?;
    write_json(&dir.join(MISMATCHES_FILE), mismatches)
}

pub fn load_results(path: impl AsRef<Path>) -> io::Result<BenchmarkResults> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(io::Error::other)
}

/// Mean ± population standard deviation of headline metrics across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub baseline: BTreeMap<String, Spread>,
    pub stepcache: BTreeMap<String, Spread>,
}

type Metric = (&'static str, fn(&ArmResult) -> f64);

fn summarize(arms: &[&ArmResult]) -> BTreeMap<String, Spread> {
    let metrics: [Metric; 9] = [
        ("mean_latency", |a| a.aggregates.mean_latency),
        ("median_latency", |a| a.aggregates.median_latency),
        ("p95_latency", |a| a.aggregates.p95_latency),
        ("tokens_per_request", |a| a.aggregates.tokens_per_request),
        ("quality_rate", |a| a.aggregates.quality_rate),
        ("final_rate", |a| a.aggregates.final_rate),
        ("reuse_only_pct", |a| a.aggregates.reuse_only_pct),
        ("patch_pct", |a| a.aggregates.patch_pct),
        ("skip_pct", |a| a.aggregates.skip_pct),
    ];
    metrics
        .iter()
        .filter_map(|(name, get)| {
            let values: Vec<f64> = arms.iter().map(|a| get(a)).collect();
            spread(&values).map(|s| (name.to_string(), s))
        })
        .collect()
}

pub fn seed_summary(runs: &[(u64, &BenchmarkResults)]) -> SeedSummary {
    SeedSummary {
        seeds: runs.iter().map(|(s, _)| *s).collect(),
        baseline: summarize(&runs.iter().map(|(_, r)| &r.arms.baseline).collect::<Vec<_>>()),
        stepcache: summarize(&runs.iter().map(|(_, r)| &r.arms.stepcache).collect::<Vec<_>>()),
    }
}

pub fn write_seed_summary(summary: &SeedSummary, out_dir: impl AsRef<Path>) -> io::Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(&dir.join(SEED_SUMMARY_FILE), summary)
}
