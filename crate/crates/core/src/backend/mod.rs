//! LLM backend abstraction.
//!
//! Every model call goes through a [`Gateway`], which wraps a [`Backend`]
//! implementation with bounded retries, token accounting and a structured
//! call log. Two backends ship with the crate: [`HttpBackend`] for
//! chat-completions endpoints and [`SimBackend`], a deterministic simulator
//! with fault injection.

mod http;
mod log;
pub mod prompts;
mod sim;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpConfig};
pub use log::{CallLog, CallRecord};
pub use prompts::{PatchKind, PatchPrompt};
pub use sim::{FaultConfig, FaultRule, SimBackend, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallType {
    BaselineGeneration,
    CacheHitReuse,
    Verification,
    Patch,
    Repair,
    SkipReuseFallback,
}

impl CallType {
    pub fn as_str(&self) -> &'static str {
        match self {
            CallType::BaselineGeneration => "baseline_generation",
            CallType::CacheHitReuse => "cache_hit_reuse",
            CallType::Verification => "verification",
            CallType::Patch => "patch",
            CallType::Repair => "repair",
            CallType::SkipReuseFallback => "skip_reuse_fallback",
        }
    }

    /// Whether this call type reaches the model.
    pub fn is_generation(&self) -> bool {
        matches!(
            self,
            CallType::BaselineGeneration
                | CallType::Patch
                | CallType::Repair
                | CallType::SkipReuseFallback
        )
    }
}

impl fmt::Display for CallType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("prompt is empty")]
    EmptyPrompt,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    /// Passed through so simulators can target faults; HTTP backends ignore it.
    pub call_type: CallType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Usage metadata as reported by the backend, when it reports any.
    pub usage: Option<Usage>,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

/// Token estimate used when a backend reports no usage: `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// One completed model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCall {
    pub request_id: String,
    pub call_type: CallType,
    pub prompt: String,
    pub response: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    /// Wall-clock seconds, retries included.
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayConfig {
    /// Retries after the first attempt for retryable failures.
    pub retries: u32,
    pub retry_backoff: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            retries: 2,
            retry_backoff: Duration::from_millis(50),
        }
    }
}

/// Retry, accounting and logging wrapper around a backend.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    log: Arc<CallLog>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_config(backend, GatewayConfig::default(), Arc::new(CallLog::default()))
    }

    pub fn with_config(backend: Arc<dyn Backend>, config: GatewayConfig, log: Arc<CallLog>) -> Self {
        Self {
            backend,
            config,
            log,
        }
    }

    pub fn log(&self) -> &Arc<CallLog> {
        &self.log
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    /// Sends `prompt` to the backend. Exactly one log record is appended per
    /// call, whether it succeeds or not.
    pub async fn generate(
        &self,
        request_id: &str,
        prompt: &str,
        call_type: CallType,
    ) -> Result<BackendCall, BackendError> {
        let started = Instant::now();
        if prompt.trim().is_empty() {
            self.log
                .append(CallRecord::failure(request_id, call_type, 0, 0.0, &BackendError::EmptyPrompt));
            return Err(BackendError::EmptyPrompt);
        }
        let request = CompletionRequest {
            prompt: prompt.to_string(),
            call_type,
        };

        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match self.backend.complete(&request).await {
                Err(e) if e.is_retryable() && attempts <= self.config.retries => {
                    tracing::debug!(request_id, %call_type, attempts, error = %e, "retrying backend call");
                    tokio::time::sleep(self.config.retry_backoff).await;
                }
                other => break other,
            }
        };
        let latency = started.elapsed().as_secs_f64();

        match result {
            Ok(completion) => {
                let usage = completion.usage.unwrap_or_else(|| Usage {
                    prompt_tokens: estimate_tokens(prompt),
                    completion_tokens: estimate_tokens(&completion.text),
                });
                let call = BackendCall {
                    request_id: request_id.to_string(),
                    call_type,
                    prompt: request.prompt,
                    response: completion.text,
                    prompt_tokens: usage.prompt_tokens,
                    completion_tokens: usage.completion_tokens,
                    total_tokens: usage.prompt_tokens + usage.completion_tokens,
                    latency,
                };
                self.log.append(CallRecord::success(&call, attempts));
                Ok(call)
            }
            Err(e) => {
                tracing::warn!(request_id, %call_type, attempts, error = %e, "backend call failed");
                self.log
                    .append(CallRecord::failure(request_id, call_type, attempts, latency, &e));
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        usage: Option<Usage>,
    }

    #[async_trait]
    impl Backend for Flaky {
        async fn complete(&self, _: &CompletionRequest) -> Result<Completion, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::Unavailable("down".into()))
            } else {
                Ok(Completion {
                    text: "hello world!".into(),
                    usage: self.usage,
                })
            }
        }
    }

    fn gateway(backend: Arc<Flaky>) -> Gateway {
        Gateway::with_config(
            backend,
            GatewayConfig {
                retries: 2,
                retry_backoff: Duration::ZERO,
            },
            Arc::new(CallLog::default()),
        )
    }

    #[test]
    fn estimator_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[tokio::test]
    async fn retries_then_succeeds() {
        let backend = Arc::new(Flaky { failures: 2, calls: AtomicU32::new(0), usage: None });
        let gw = gateway(backend.clone());
        let call = gw.generate("r1", "prompt!!", CallType::Patch).await.unwrap();
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        assert_eq!(call.prompt_tokens, 2);
        assert_eq!(call.completion_tokens, 3);
        assert_eq!(call.total_tokens, 5);
        let log = gw.log().records();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].attempts, 3);
        assert!(log[0].ok);
    }

    #[tokio::test]
    async fn gives_up_after_retries() {
        let backend = Arc::new(Flaky { failures: 10, calls: AtomicU32::new(0), usage: None });
        let gw = gateway(backend.clone());
        let err = gw.generate("r1", "p", CallType::Repair).await.unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
        let log = gw.log().records();
        assert_eq!(log.len(), 1);
        assert!(!log[0].ok);
    }

    #[tokio::test]
    async fn reported_usage_wins_over_estimate() {
        let usage = Some(Usage { prompt_tokens: 11, completion_tokens: 7 });
        let backend = Arc::new(Flaky { failures: 0, calls: AtomicU32::new(0), usage });
        let call = gateway(backend).generate("r", "p", CallType::BaselineGeneration).await.unwrap();
        assert_eq!((call.prompt_tokens, call.completion_tokens, call.total_tokens), (11, 7, 18));
    }

    #[tokio::test]
    async fn empty_prompt_is_rejected_and_logged() {
        let backend = Arc::new(Flaky { failures: 0, calls: AtomicU32::new(0), usage: None });
        let gw = gateway(backend);
        assert_eq!(
            gw.generate("r", "  ", CallType::Patch).await.unwrap_err(),
            BackendError::EmptyPrompt
        );
        assert_eq!(gw.log().len(), 1);
    }
}
