use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use stepcache_proxy::{Service, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Serves an OpenAI-compatible chat-completions endpoint backed by stepcache.
#[derive(Debug, Parser)]
#[command(name = "stepcache-proxy", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address; overrides the file and environment.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// `sim` or the upstream base URL; overrides the file and environment.
    #[arg(long)]
    upstream: Option<String>,
    /// Cache journal path; overrides the file and environment.
    #[arg(long)]
    cache_file: Option<PathBuf>,
    /// Forward every request upstream without caching.
    #[arg(long)]
    no_cache: bool,
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();

    let mut config = match &cli.config {
        Some(path) => ServiceConfig::from_file(path)?,
        None => ServiceConfig::default(),
    }
    .with_env_overrides()?;
    if let Some(listen) = cli.listen {
        config.listen = listen;
    }
    if let Some(upstream) = cli.upstream {
        config.upstream = upstream;
    }
    if let Some(path) = cli.cache_file {
        config.cache_file = Some(path);
    }
    if cli.no_cache {
        config.caching = false;
    }

    let listen = config.listen;
    let service = Service::new(config).context("starting service")?;
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    tracing::info!(%listen, upstream = %service.config().upstream, "listening");
    service.serve(listener, shutdown_signal()).await?;
    Ok(())
}
