//! Global counters, per-request records and run aggregates.

use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::backend::CallType;
use crate::orchestrator::Path;
use crate::store::TaskType;

/// Process-wide event counters. Reads are lock-free.
#[derive(Debug, Default)]
pub struct Counters {
    requests: AtomicU64,
    errors: AtomicU64,
    baseline_generation: AtomicU64,
    cache_hit_reuse: AtomicU64,
    verification: AtomicU64,
    patch: AtomicU64,
    repair: AtomicU64,
    skip_reuse_fallback: AtomicU64,
    deterministic_fallback: AtomicU64,
    miss: AtomicU64,
    reuse_only: AtomicU64,
    patched: AtomicU64,
    skip_reuse: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub requests: u64,
    pub errors: u64,
    pub baseline_generation: u64,
    pub cache_hit_reuse: u64,
    pub verification: u64,
    pub patch: u64,
    pub repair: u64,
    pub skip_reuse_fallback: u64,
    pub deterministic_fallback: u64,
    pub miss: u64,
    pub reuse_only: u64,
    pub patched: u64,
    pub skip_reuse: u64,
}

impl CounterSnapshot {
    /// Requests that finished with an outcome or an error.
    pub fn completed(&self) -> u64 {
        self.miss + self.reuse_only + self.patched + self.skip_reuse + self.errors
    }
}

fn inc(counter: &AtomicU64) {
    counter.fetch_add(1, Ordering::Relaxed);
}

impl Counters {
    pub fn request(&self) {
        inc(&self.requests);
    }

    pub fn error(&self) {
        inc(&self.errors);
    }

    pub fn verification(&self) {
        inc(&self.verification);
    }

    pub fn deterministic_fallback(&self) {
        inc(&self.deterministic_fallback);
    }

    /// Counts one backend call attempt of the given type.
    pub fn call(&self, call_type: CallType) {
        inc(match call_type {
            CallType::BaselineGeneration => &self.baseline_generation,
            CallType::CacheHitReuse => &self.cache_hit_reuse,
            CallType::Verification => &self.verification,
            CallType::Patch => &self.patch,
            CallType::Repair => &self.repair,
            CallType::SkipReuseFallback => &self.skip_reuse_fallback,
        });
    }

    pub fn outcome(&self, path: Path) {
        match path {
            Path::Miss => inc(&self.miss),
            Path::ReuseOnly => {
                inc(&self.reuse_only);
                inc(&self.cache_hit_reuse);
            }
            Path::Patched => inc(&self.patched),
            Path::SkipReuse => inc(&self.skip_reuse),
        }
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        CounterSnapshot {
            requests: get(&self.requests),
            errors: get(&self.errors),
            baseline_generation: get(&self.baseline_generation),
            cache_hit_reuse: get(&self.cache_hit_reuse),
            verification: get(&self.verification),
            patch: get(&self.patch),
            repair: get(&self.repair),
            skip_reuse_fallback: get(&self.skip_reuse_fallback),
            deterministic_fallback: get(&self.deterministic_fallback),
            miss: get(&self.miss),
            reuse_only: get(&self.reuse_only),
            patched: get(&self.patched),
            skip_reuse: get(&self.skip_reuse),
        }
    }
}

/// Outcome path of a record; `Direct` marks baseline-arm requests that went
/// straight to the backend and `Error` marks requests that failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordPath {
    Direct,
    Miss,
    ReuseOnly,
    Patched,
    SkipReuse,
    Error,
}

impl From<Path> for RecordPath {
    fn from(path: Path) -> Self {
        match path {
            Path::Miss => RecordPath::Miss,
            Path::ReuseOnly => RecordPath::ReuseOnly,
            Path::Patched => RecordPath::Patched,
            Path::SkipReuse => RecordPath::SkipReuse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: String,
    pub task: TaskType,
    pub perturbation: String,
    pub path: RecordPath,
    /// Seconds.
    pub latency: f64,
    pub tokens: u64,
    pub quality_pass: bool,
    pub final_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub requests: usize,
    pub mean_latency: f64,
    pub median_latency: f64,
    pub p95_latency: f64,
    pub min_latency: f64,
    pub total_tokens: u64,
    pub tokens_per_request: f64,
    pub quality_rate: f64,
    pub final_rate: f64,
    pub reuse_only_pct: f64,
    pub patch_pct: f64,
    pub skip_pct: f64,
    pub miss_pct: f64,
    pub direct_pct: f64,
    pub error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    NoData,
}

/// Nearest-rank percentile: the `ceil(q·N)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Median of a sorted sample (mean of the two middle values for even sizes).
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

pub fn aggregate(records: &[RequestRecord]) -> Result<Aggregates, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoData);
    }
    let n = records.len();
    let mut latencies: Vec<f64> = records.iter().map(|r| r.latency).collect();
    latencies.sort_by(f64::total_cmp);
    let total_tokens: u64 = records.iter().map(|r| r.tokens).sum();
    let count = |path: RecordPath| records.iter().filter(|r| r.path == path).count();
    Ok(Aggregates {
        requests: n,
        mean_latency: latencies.iter().sum::<f64>() / n as f64,
        median_latency: median(&latencies).expect("non-empty"),
        p95_latency: nearest_rank(&latencies, 0.95).expect("non-empty"),
        min_latency: latencies[0],
        total_tokens,
        tokens_per_request: total_tokens as f64 / n as f64,
        quality_rate: pct(records.iter().filter(|r| r.quality_pass).count(), n),
        final_rate: pct(records.iter().filter(|r| r.final_pass).count(), n),
        reuse_only_pct: pct(count(RecordPath::ReuseOnly), n),
        patch_pct: pct(count(RecordPath::Patched), n),
        skip_pct: pct(count(RecordPath::SkipReuse), n),
        miss_pct: pct(count(RecordPath::Miss), n),
        direct_pct: pct(count(RecordPath::Direct), n),
        error_pct: pct(count(RecordPath::Error), n),
    })
}

/// Per-request records of one run.
#[derive(Debug, Default)]
pub struct RunStats {
    records: Mutex<Vec<RequestRecord>>,
}

impl RunStats {
    pub fn record(&self, record: RequestRecord) {
        self.records.lock().push(record);
    }

    pub fn records(&self) -> Vec<RequestRecord> {
        self.records.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn aggregate(&self) -> Result<Aggregates, MetricsError> {
        aggregate(&self.records.lock())
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

pub fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Spread {
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(path: RecordPath, latency: f64, tokens: u64) -> RequestRecord {
        RequestRecord {
            request_id: "r".into(),
            task: TaskType::Math,
            perturbation: "low".into(),
            path,
            latency,
            tokens,
            quality_pass: true,
            final_pass: true,
            error: None,
        }
    }

    #[test]
    fn p95_of_one_to_hundred_is_95() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&xs, 0.95), Some(95.0));
    }

    #[test]
    fn median_of_mixed_latencies() {
        let records: Vec<_> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .into_iter()
            .map(|l| record(RecordPath::ReuseOnly, l, 0))
            .collect();
        let agg = aggregate(&records).unwrap();
        assert_eq!(agg.median_latency, 3.0);
        assert_eq!(agg.mean_latency, 22.0);
    }

    #[test]
    fn single_record_statistics_coincide() {
        let agg = aggregate(&[record(RecordPath::Miss, 0.7, 9)]).unwrap();
        assert_eq!(agg.mean_latency, 0.7);
        assert_eq!(agg.median_latency, 0.7);
        assert_eq!(agg.p95_latency, 0.7);
        assert_eq!(agg.tokens_per_request, 9.0);
    }

    #[test]
    fn empty_run_has_no_data() {
        assert_eq!(RunStats::default().aggregate(), Err(MetricsError::NoData));
    }

    #[test]
    fn outcome_split_matches_published_rounding() {
        let mut records = Vec::new();
        records.extend((0..177).map(|_| record(RecordPath::ReuseOnly, 0.1, 0)));
        records.extend((0..12).map(|_| record(RecordPath::Patched, 0.1, 0)));
        records.extend((0..33).map(|_| record(RecordPath::SkipReuse, 0.1, 0)));
        let agg = aggregate(&records).unwrap();
        assert_eq!(format!("{:.1}", agg.reuse_only_pct), "79.7");
        assert_eq!(format!("{:.1}", agg.patch_pct), "5.4");
        assert_eq!(format!("{:.1}", agg.skip_pct), "14.9");
    }

    #[test]
    fn spread_uses_population_std() {
        let s = spread(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, 2.0);
    }

    #[test]
    fn counters_track_outcomes() {
        let c = Counters::default();
        c.request();
        c.outcome(Path::ReuseOnly);
        c.request();
        c.call(CallType::Patch);
        c.outcome(Path::Patched);
        let s = c.snapshot();
        assert_eq!(s.requests, 2);
        assert_eq!(s.completed(), 2);
        assert_eq!(s.cache_hit_reuse, 1);
        assert_eq!(s.patch, 1);
    }

    fn any_path() -> impl Strategy<Value = RecordPath> {
        prop_oneof![
            Just(RecordPath::Direct),
            Just(RecordPath::Miss),
            Just(RecordPath::ReuseOnly),
            Just(RecordPath::Patched),
            Just(RecordPath::SkipReuse),
            Just(RecordPath::Error),
        ]
    }

    proptest! {
        #[test]
        fn aggregate_invariants(
            rows in prop::collection::vec((any_path(), 0.0f64..10.0, 0u64..1000), 1..200)
        ) {
            let records: Vec<_> = rows.into_iter().map(|(p, l, t)| record(p, l, t)).collect();
            let agg = aggregate(&records).unwrap();
            let sum = agg.reuse_only_pct + agg.patch_pct + agg.skip_pct + agg.miss_pct
                + agg.direct_pct + agg.error_pct;
            prop_assert!((sum - 100.0).abs() < 1e-9);
            prop_assert!(agg.p95_latency >= agg.median_latency);
            prop_assert!(agg.median_latency >= agg.min_latency);
            prop_assert_eq!(agg.total_tokens, records.iter().map(|r| r.tokens).sum::<u64>());
        }
    }
}
