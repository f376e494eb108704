//! HTTP adapters for live completion backends.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::request::{ChatRequest, ChatResponse, FinishReason, Role, Usage};

/// Failure reported by a provider. `transient` failures are retried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderFailure {
    pub status: Option<u16>,
    pub body: String,
    pub transient: bool,
}

impl ProviderFailure {
    fn transport(e: impl std::fmt::Display) -> Self {
        ProviderFailure { status: None, body: e.to_string(), transient: true }
    }

    fn http(status: u16, body: String) -> Self {
        ProviderFailure {
            status: Some(status),
            body,
            transient: status == 408 || status == 429 || status >= 500,
        }
    }

    fn malformed(body: &str, why: &str) -> Self {
        ProviderFailure {
            status: None,
            body: format!("{why}: {}", truncate(body, 500)),
            transient: false,
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// A live completion backend.
pub trait ChatProvider: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    OpenAiCompatible,
    AnthropicCompatible,
}

impl ProviderKind {
    /// `anthropic`-named backends use the Anthropic shape; everything else
    /// is assumed OpenAI-compatible.
    pub fn for_backend(backend_id: &str) -> Self {
        if backend_id.to_ascii_lowercase().starts_with("anthropic") {
            ProviderKind::AnthropicCompatible
        } else {
            ProviderKind::OpenAiCompatible
        }
    }

    pub fn default_base_url(self) -> &'static str {
        match self {
            ProviderKind::OpenAiCompatible => "https://api.openai.com/v1",
            ProviderKind::AnthropicCompatible => "https://api.anthropic.com",
        }
    }
}

/// Environment variable suffix for a backend id: uppercased, with every
/// non-alphanumeric character replaced by `_`.
pub fn env_suffix(backend_id: &str) -> String {
    backend_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect()
}

pub struct HttpProvider {
    kind: ProviderKind,
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(kind: ProviderKind, base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        HttpProvider {
            kind,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client,
        }
    }

    /// Builds a provider from `MOSAIC_API_KEY_<BACKEND>` and the optional
    /// `MOSAIC_BASE_URL_<BACKEND>`.
    pub fn from_env(backend_id: &str, kind: ProviderKind, timeout: Duration) -> Result<Self, String> {
        let suffix = env_suffix(backend_id);
        let key_var = format!("MOSAIC_API_KEY_{suffix}");
        let api_key = std::env::var(&key_var).map_err(|_| format!("{key_var} is not set"))?;
        let base_url = std::env::var(format!("MOSAIC_BASE_URL_{suffix}"))
            .unwrap_or_else(|_| kind.default_base_url().to_string());
        Ok(HttpProvider::new(kind, base_url, api_key, timeout))
    }

    fn endpoint(&self) -> String {
        match self.kind {
            ProviderKind::OpenAiCompatible => format!("{}/chat/completions", self.base_url),
            ProviderKind::AnthropicCompatible => format!("{}/v1/messages", self.base_url),
        }
    }
}

/// JSON body for the given wire shape.
pub fn request_body(kind: ProviderKind, request: &ChatRequest) -> Value {
    match kind {
        ProviderKind::OpenAiCompatible => json!({
            "model": request.model_id,
            "messages": request.messages.iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }),
        ProviderKind::AnthropicCompatible => {
            let system: Vec<&str> = request
                .messages
                .iter()
                .filter(|m| m.role == Role::System)
                .map(|m| m.content.as_str())
                .collect();
            json!({
                "model": request.model_id,
                "system": system.join("\n\n"),
                "messages": request.messages.iter()
                    .filter(|m| m.role != Role::System)
                    .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                    .collect::<Vec<_>>(),
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            })
        }
    }
}

/// Parses a successful response body.
pub fn parse_response(kind: ProviderKind, body: &str) -> Result<(String, FinishReason, Usage), ProviderFailure> {
    let v: Value = serde_json::from_str(body).map_err(|_| ProviderFailure::malformed(body, "invalid JSON"))?;
    let u64_at = |p: &str| v.pointer(p).and_then(Value::as_u64).unwrap_or(0);
    match kind {
        ProviderKind::OpenAiCompatible => {
            let choice = v
                .pointer("/choices/0")
                .ok_or_else(|| ProviderFailure::malformed(body, "no choices"))?;
            let content = choice
                .pointer("/message/content")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let finish = match choice.get("finish_reason").and_then(Value::as_str) {
                Some("length") => FinishReason::Length,
                Some("stop") | None => FinishReason::Stop,
                Some(_) => FinishReason::Error,
            };
            let usage = Usage {
                prompt_tokens: u64_at("/usage/prompt_tokens"),
                completion_tokens: u64_at("/usage/completion_tokens"),
            };
            Ok((content, finish, usage))
        }
        ProviderKind::AnthropicCompatible => {
            let blocks = v
                .get("content")
                .and_then(Value::as_array)
                .ok_or_else(|| ProviderFailure::malformed(body, "no content"))?;
            let content: String = blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            let finish = match v.get("stop_reason").and_then(Value::as_str) {
                Some("max_tokens") => FinishReason::Length,
                Some("end_turn") | Some("stop_sequence") | None => FinishReason::Stop,
                Some(_) => FinishReason::Error,
            };
            let usage = Usage {
                prompt_tokens: u64_at("/usage/input_tokens"),
                completion_tokens: u64_at("/usage/output_tokens"),
            };
            Ok((content, finish, usage))
        }
    }
}

impl ChatProvider for HttpProvider {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        let started = Instant::now();
        let mut builder = self.client.post(self.endpoint()).json(&request_body(self.kind, request));
        builder = match self.kind {
            ProviderKind::OpenAiCompatible => builder.bearer_auth(&self.api_key),
            ProviderKind::AnthropicCompatible => builder
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", "2023-06-01"),
        };
        let response = builder.send().map_err(ProviderFailure::transport)?;
        let status = response.status().as_u16();
        let body = response.text().map_err(ProviderFailure::transport)?;
        if !(200..300).contains(&status) {
            return Err(ProviderFailure::http(status, body));
        }
        let (content, finish_reason, usage) = parse_response(self.kind, &body)?;
        Ok(ChatResponse {
            content,
            finish_reason,
            usage,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
