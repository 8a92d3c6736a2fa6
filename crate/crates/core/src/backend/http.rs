//! Chat-completions HTTP client.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Completion, CompletionRequest, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            model: "default".into(),
            timeout: Duration::from_secs(60),
        }
    }
}

impl HttpConfig {
    pub const ENV_BASE_URL: &'static str = "STEPCACHE_BASE_URL";
    pub const ENV_MODEL: &'static str = "STEPCACHE_MODEL";

    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            ..Self::default()
        }
    }

    /// Applies `STEPCACHE_BASE_URL` / `STEPCACHE_MODEL` from `lookup`.
    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(url) = lookup(Self::ENV_BASE_URL) {
            self.base_url = url;
        }
        if let Some(model) = lookup(Self::ENV_MODEL) {
            self.model = model;
        }
        self
    }

    pub fn with_env_overrides(self) -> Self {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Posts an arbitrary chat-completions body and returns the raw JSON reply.
    pub async fn post_raw(&self, body: &Value) -> Result<Value, BackendError> {
        let response = self
            .client
            .post(self.config.endpoint())
            .json(body)
            .send()
            .await
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(BackendError::Unavailable(format!("status {status}: {text}")));
        }
        let bytes = response
            .bytes()
            .await
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Protocol(e.to_string()))
    }

    /// Posts a pre-encoded JSON body and returns the upstream status and body
    /// bytes untouched. Only transport failures are errors.
    pub async fn forward(&self, body: Vec<u8>) -> Result<(u16, Vec<u8>), BackendError> {
        let response = self
            .client
            .post(self.config.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .await
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = response.status().as_u16();
        let bytes = response
            .bytes()
            .await
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok((status, bytes.to_vec()))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Reads the first choice's content and the usage block from a reply.
pub(crate) fn parse_chat_response(value: Value) -> Result<Completion, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_value(value).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Protocol("response has no message content".into()))?;
    Ok(Completion {
        text,
        usage: parsed.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        parse_chat_response(self.post_raw(&body).await?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_apply() {
        let cfg = HttpConfig::default().with_overrides(|k| match k {
            "STEPCACHE_BASE_URL" => Some("http://upstream:9000/".into()),
            "STEPCACHE_MODEL" => Some("qwen".into()),
            _ => None,
        });
        assert_eq!(cfg.model, "qwen");
        assert_eq!(cfg.endpoint(), "http://upstream:9000/v1/chat/completions");
    }

    #[test]
    fn parses_usage_when_present() {
        let c = parse_chat_response(json!({
            "choices": [{ "message": { "role": "assistant", "content": "hi" } }],
            "usage": { "prompt_tokens": 3, "completion_tokens": 1, "total_tokens": 4 }
        }))
        .unwrap();
        assert_eq!(c.text, "hi");
        assert_eq!(c.usage, Some(Usage { prompt_tokens: 3, completion_tokens: 1 }));
    }

    #[test]
    fn missing_content_is_protocol_error() {
        let err = parse_chat_response(json!({ "choices": [] })).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
        let err = parse_chat_response(json!({ "nope": 1 })).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }
}
