//! Service configuration: a TOML file plus `STEPCACHE_*` environment
//! overrides.

use std::net::{IpAddr, Ipv4Addr, SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use stepcache::backend::HttpConfig;
use stepcache::store::TaskType;

/// Upstream value selecting the built-in simulator.
pub const SIM_UPSTREAM: &str = "sim";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {key}: {value:?}")]
    Override { key: &'static str, value: String },
    #[error("upstream {upstream} resolves to the listen address {listen}")]
    SameAddress { listen: SocketAddr, upstream: String },
    #[error("invalid upstream url {0:?}")]
    Upstream(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// `sim` or the base URL of a chat-completions server.
    pub upstream: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Cache journal restored at startup and written on shutdown.
    pub cache_file: Option<PathBuf>,
    /// When false every request is forwarded upstream unchanged.
    pub caching: bool,
    /// Task type for requests that carry no `stepcache` extension field.
    pub default_task: TaskType,
    pub inconsistent_fraction_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), 8080),
            upstream: SIM_UPSTREAM.into(),
            model: "default".into(),
            timeout_secs: 60.0,
            cache_file: None,
            caching: true,
            default_task: TaskType::Other,
            inconsistent_fraction_threshold:
                stepcache::orchestrator::DEFAULT_INCONSISTENT_FRACTION_THRESHOLD,
        }
    }
}

impl ServiceConfig {
    pub const ENV_LISTEN: &'static str = "STEPCACHE_LISTEN";
    pub const ENV_UPSTREAM: &'static str = "STEPCACHE_UPSTREAM";
    pub const ENV_CACHE_FILE: &'static str = "STEPCACHE_CACHE_FILE";
    pub const ENV_CACHING: &'static str = "STEPCACHE_CACHING";

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies overrides from `lookup`. `STEPCACHE_BASE_URL` is accepted as
    /// an alias for `STEPCACHE_UPSTREAM`.
    pub fn with_overrides(
        mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        if let Some(v) = lookup(Self::ENV_LISTEN) {
            self.listen = v.parse().map_err(|_| ConfigError::Override {
                key: Self::ENV_LISTEN,
                value: v,
            })?;
        }
        if let Some(v) = lookup(Self::ENV_UPSTREAM).or_else(|| lookup(HttpConfig::ENV_BASE_URL)) {
            self.upstream = v;
        }
        if let Some(v) = lookup(HttpConfig::ENV_MODEL) {
            self.model = v;
        }
        if let Some(v) = lookup(Self::ENV_CACHE_FILE) {
            self.cache_file = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        if let Some(v) = lookup(Self::ENV_CACHING) {
            self.caching = match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "on" | "yes" => true,
                "0" | "false" | "off" | "no" => false,
                _ => {
                    return Err(ConfigError::Override {
                        key: Self::ENV_CACHING,
                        value: v,
                    })
                }
            };
        }
        Ok(self)
    }

    pub fn with_env_overrides(self) -> Result<Self, ConfigError> {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn is_sim(&self) -> bool {
        self.upstream == SIM_UPSTREAM
    }

    pub fn http(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.upstream.clone(),
            model: self.model.clone(),
            timeout: Duration::from_secs_f64(self.timeout_secs.max(0.0)),
        }
    }

    /// Rejects an upstream that points back at the listen address.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.is_sim() {
            return Ok(());
        }
        let rest = self
            .upstream
            .split_once("://")
            .map(|(_, rest)| rest)
            .ok_or_else(|| ConfigError::Upstream(self.upstream.clone()))?;
        let authority = rest.split('/').next().unwrap_or_default();
        if authority.is_empty() {
            return Err(ConfigError::Upstream(self.upstream.clone()));
        }
        let with_port = if authority.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) {
            authority.to_string()
        } else if self.upstream.starts_with("https") {
            format!("{authority}:443")
        } else {
            format!("{authority}:80")
        };
        let resolved: Vec<SocketAddr> = with_port
            .to_socket_addrs()
            .map(|addrs| addrs.collect())
            .unwrap_or_default();
        let clash = resolved.iter().any(|addr| {
            addr.port() == self.listen.port()
                && (addr.ip() == self.listen.ip()
                    || self.listen.ip().is_unspecified() && addr.ip().is_loopback())
        });
        if clash {
            return Err(ConfigError::SameAddress {
                listen: self.listen,
                upstream: self.upstream.clone(),
            });
        }
        Ok(())
    }
}
