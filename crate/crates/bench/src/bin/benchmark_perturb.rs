use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use stepcache::backend::{FaultConfig, FaultRule, HttpConfig};
use stepcache_bench::report::{seed_summary, write_reports, write_seed_summary};
use stepcache_bench::{run_benchmark, BackendChoice, BenchConfig};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "verify_patch")]
    VerifyPatch,
}

/// Runs the perturbation benchmark for the baseline and StepCache arms.
#[derive(Debug, Parser)]
#[command(name = "benchmark-perturb", version)]
struct Cli {
    /// Base prompts per task.
    #[arg(short = 'n', default_value_t = 10)]
    n: usize,
    /// Variants per perturbation kind.
    #[arg(short = 'k', default_value_t = 3)]
    k: usize,
    /// Suite and simulator seed; repeat to run several seeds.
    #[arg(long = "seed", default_values_t = [42])]
    seeds: Vec<u64>,
    /// Include code tasks (not supported).
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    include_code: u8,
    #[arg(long, value_enum, default_value = "verify_patch")]
    mode: Mode,
    /// `sim` or the base URL of a chat-completions server.
    #[arg(long, default_value = "sim")]
    backend: String,
    /// Model name sent to an HTTP backend.
    #[arg(long, default_value = "default")]
    model: String,
    /// Output directory.
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    /// Simulated per-call latency in milliseconds.
    #[arg(long, default_value_t = 0)]
    sim_latency_ms: u64,
    /// Simulated wrong-constant fault rate.
    #[arg(long, default_value_t = 0.0)]
    fault_wrong_constant: f64,
    /// Simulated invalid-JSON fault rate.
    #[arg(long, default_value_t = 0.0)]
    fault_invalid_json: f64,
    /// Simulated missing-key fault rate.
    #[arg(long, default_value_t = 0.0)]
    fault_missing_key: f64,
    /// Simulated outage rate.
    #[arg(long, default_value_t = 0.0)]
    fault_unavailable: f64,
}

impl Cli {
    fn config(&self, seed: u64) -> BenchConfig {
        let faults = FaultConfig {
            wrong_constant: FaultRule::at_rate(self.fault_wrong_constant),
            invalid_json: FaultRule::at_rate(self.fault_invalid_json),
            missing_key: FaultRule::at_rate(self.fault_missing_key),
            unavailable: FaultRule::at_rate(self.fault_unavailable),
        };
        let mut config = BenchConfig::sim_with(
            self.n,
            self.k,
            seed,
            faults,
            Duration::from_millis(self.sim_latency_ms),
        );
        config.include_code = self.include_code == 1;
        if self.backend != "sim" {
            config.backend = BackendChoice::Http(HttpConfig::new(&self.backend, &self.model));
        }
        config
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();
    let cli = Cli::parse();
    let Mode::VerifyPatch = cli.mode;
    if cli.include_code == 1 {
        bail!("--include-code 1 is not supported: code tasks are not part of this benchmark");
    }

    let mut runs = Vec::new();
    for &seed in &cli.seeds {
        let out_dir = if cli.seeds.len() > 1 {
            cli.out.join(format!("seed_{seed}"))
        } else {
            cli.out.clone()
        };
        let output = run_benchmark(&cli.config(seed))
            .await
            .with_context(|| format!("benchmark run for seed {seed}"))?;
        write_reports(&output.results, &output.stepcache.mismatches, &out_dir)
            .with_context(|| format!("writing reports to {}", out_dir.display()))?;

        let base = &output.results.arms.baseline.aggregates;
        let sc = &output.results.arms.stepcache.aggregates;
        println!(
            "seed {seed}: {} requests | baseline mean {:.4}s p95 {:.4}s tok/req {:.1} final {:.1}% | \
             stepcache mean {:.4}s p95 {:.4}s tok/req {:.1} final {:.1}% | reuse {:.1}% patch {:.1}% skip {:.1}%",
            sc.requests,
            base.mean_latency,
            base.p95_latency,
            base.tokens_per_request,
            base.final_rate,
            sc.mean_latency,
            sc.p95_latency,
            sc.tokens_per_request,
            sc.final_rate,
            sc.reuse_only_pct,
            sc.patch_pct,
            sc.skip_pct,
        );
        for row in &output.results.breakdown {
            println!(
                "  {:<5} {:<13} n={:<3} reuse {:>5.1}% patch {:>5.1}% skip {:>5.1}% tokens saved {:>4} final {:>5.1}%",
                row.task.to_string(),
                row.perturbation,
                row.requests,
                row.reuse_only_pct,
                row.patch_pct,
                row.skip_pct,
                row.tokens_saved,
                row.final_pct
            );
        }
        runs.push((seed, output.results));
    }

    if runs.len() > 1 {
        let refs: Vec<_> = runs.iter().map(|(s, r)| (*s, r)).collect();
        let summary = seed_summary(&refs);
        write_seed_summary(&summary, &cli.out)?;
        for (name, s) in &summary.stepcache {
            println!("stepcache {name}: {:.4} ± {:.4}", s.mean, s.std);
        }
    }
    Ok(())
}
