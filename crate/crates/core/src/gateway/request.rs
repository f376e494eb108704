use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message { role, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message::new(Role::Assistant, content)
    }
}

/// Which agent issued a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentTag {
    SelfReflection,
    Rationale,
    Coding,
    Debugger,
}

impl fmt::Display for AgentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub backend_id: String,
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub agent_tag: AgentTag,
}

impl ChatRequest {
    pub fn new(
        backend_id: impl Into<String>,
        model_id: impl Into<String>,
        messages: Vec<Message>,
        temperature: f64,
        max_tokens: u32,
        agent_tag: AgentTag,
    ) -> Result<Self, GatewayError> {
        let req = ChatRequest {
            backend_id: backend_id.into(),
            model_id: model_id.into(),
            messages,
            temperature,
            max_tokens,
            agent_tag,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.messages.first() {
            None => return invalid("messages must not be empty"),
            Some(m) if m.role != Role::System => return invalid("first message must have role system"),
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature must lie in [0, 2]");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    /// Stable hex key identifying this request in a replay store.
    ///
    /// SHA-256 over the byte string
    /// `"mosaic-replay-v1"`, then for each of backend_id, model_id, the
    /// temperature's IEEE-754 bits as 16 lowercase hex digits, and the
    /// decimal message count: an 8-byte little-endian length followed by
    /// the bytes; then for each message the role name and the content with
    /// line endings normalised to `\n`, encoded the same way. `max_tokens`
    /// and the agent tag are not part of the key.
    pub fn replay_key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"mosaic-replay-v1");
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        // -0.0 and 0.0 hash alike
        let temperature = if self.temperature == 0.0 { 0.0f64 } else { self.temperature };
        field(self.backend_id.as_bytes());
        field(self.model_id.as_bytes());
        field(format!("{:016x}", temperature.to_bits()).as_bytes());
        field(self.messages.len().to_string().as_bytes());
        for m in &self.messages {
            field(m.role.as_str().as_bytes());
            field(normalize_newlines(&m.content).as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Digest of the messages alone, stored next to each replay record.
    pub fn messages_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for m in &self.messages {
            hasher.update(m.role.as_str().as_bytes());
            hasher.update([0u8]);
            hasher.update(normalize_newlines(&m.content).as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

pub fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
            latency_ms: 0,
        }
    }
}
