//! Backend-agnostic chat completion with live, record and replay modes.
//!
//! In replay mode every answer comes from a [`ReplayStore`] keyed by
//! [`ChatRequest::replay_key`], so a recorded session can be re-run without
//! network access and reproduces every response exactly.

mod provider;
mod request;
mod store;
mod template;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use provider::{
    env_suffix, parse_response, request_body, ChatProvider, HttpProvider, ProviderFailure, ProviderKind,
};
pub use request::{
    normalize_newlines, AgentTag, ChatRequest, ChatResponse, FinishReason, Message, Role, Usage,
};
pub use store::{ReplayRecord, ReplayStore, RequestDigest};
pub use template::{placeholders, render_text, TemplateStore, TEMPLATE_EXTENSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("no recorded response for {agent_tag} request (replay key {replay_key})")]
    MissingFixture { replay_key: String, agent_tag: AgentTag },
    #[error("provider error (status {status:?}): {body}")]
    Provider { status: Option<u16>, body: String },
    #[error("token budget exhausted: {used} of {limit} tokens used")]
    BudgetExceeded { used: u64, limit: u64 },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("replay store: {0}")]
    Store(String),
    #[error("replay store holds conflicting responses for key {replay_key}")]
    StoreCorruption { replay_key: String },
    #[error("no live provider configured for {0} mode")]
    NoProvider(Mode),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template placeholder {{{0}}} has no binding")]
    UnboundPlaceholder(String),
    #[error("template: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other:?} (expected live, record or replay)")),
        }
    }
}

/// Retries after transient provider failures, doubling the delay each time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

pub struct Gateway {
    mode: Mode,
    provider: Option<Arc<dyn ChatProvider>>,
    store: Option<ReplayStore>,
    retry: RetryPolicy,
    token_limit: Option<u64>,
    tokens_used: AtomicU64,
    network_calls: AtomicU64,
}

impl Gateway {
    /// Replay-only gateway. It has no provider, so it cannot reach a network.
    pub fn replay(store: ReplayStore) -> Self {
        Gateway::build(Mode::Replay, None, Some(store))
    }

    pub fn record(provider: Arc<dyn ChatProvider>, store: ReplayStore) -> Self {
        Gateway::build(Mode::Record, Some(provider), Some(store))
    }

    pub fn live(provider: Arc<dyn ChatProvider>) -> Self {
        Gateway::build(Mode::Live, Some(provider), None)
    }

    fn build(mode: Mode, provider: Option<Arc<dyn ChatProvider>>, store: Option<ReplayStore>) -> Self {
        Gateway {
            mode,
            provider,
            store,
            retry: RetryPolicy::default(),
            token_limit: None,
            tokens_used: AtomicU64::new(0),
            network_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_token_limit(mut self, limit: Option<u64>) -> Self {
        self.token_limit = limit;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of requests sent to a live provider, counting retries.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used.load(Ordering::SeqCst)
    }

    pub fn store(&self) -> Option<&ReplayStore> {
        self.store.as_ref()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        if let Some(limit) = self.token_limit {
            let used = self.tokens_used();
            if used >= limit {
                return Err(GatewayError::BudgetExceeded { used, limit });
            }
        }
        let response = match self.mode {
            Mode::Replay => {
                let store = self.store.as_ref().ok_or(GatewayError::NoProvider(Mode::Replay))?;
                store.get(&request.replay_key()).ok_or_else(|| GatewayError::MissingFixture {
                    replay_key: request.replay_key(),
                    agent_tag: request.agent_tag,
                })?
            }
            Mode::Record => {
                let store = self.store.as_ref().ok_or(GatewayError::NoProvider(Mode::Record))?;
                match store.get(&request.replay_key()) {
                    Some(hit) => hit,
                    None => {
                        let fresh = self.send_with_retry(request)?;
                        store.insert(request, &fresh)?;
                        fresh
                    }
                }
            }
            Mode::Live => self.send_with_retry(request)?,
        };
        self.tokens_used.fetch_add(response.usage.total(), Ordering::SeqCst);
        Ok(response)
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let provider = self.provider.as_ref().ok_or(GatewayError::NoProvider(self.mode))?;
        let mut retry = 0;
        loop {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match provider.send(request) {
                Ok(response) => return Ok(response),
                Err(failure) if failure.transient && retry < self.retry.max_retries => {
                    let delay = self.retry.delay(retry);
                    tracing::warn!(
                        status = ?failure.status,
                        retry = retry + 1,
                        delay_ms = delay.as_millis() as u64,
                        "transient provider failure; retrying"
                    );
                    thread::sleep(delay);
                    retry += 1;
                }
                Err(failure) => {
                    return Err(GatewayError::Provider { status: failure.status, body: failure.body });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures: Mutex<u32>,
        status: u16,
    }

    impl ChatProvider for Flaky {
        fn send(&self, _: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
            let mut left = self.failures.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(ProviderFailure {
                    status: Some(self.status),
                    body: "busy".into(),
                    transient: self.status >= 500,
                });
            }
            let mut r = ChatResponse::stop("fine");
            r.usage = Usage { prompt_tokens: 10, completion_tokens: 5 };
            Ok(r)
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(1) }
    }

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("b", "m", vec![Message::system("s"), Message::user(text)], 0.0, 8, AgentTag::Coding).unwrap()
    }

    #[test]
    fn default_retry_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_retries, 3);
        let delays: Vec<u64> = (0..3).map(|i| p.delay(i).as_secs()).collect();
        assert_eq!(delays, vec![1, 2, 4]);
    }

    #[test]
    fn replay_hit_and_miss() {
        let store = ReplayStore::in_memory();
        store.insert(&req("a"), &ChatResponse::stop("stored")).unwrap();
        let gw = Gateway::replay(store);
        assert_eq!(gw.complete(&req("a")).unwrap().content, "stored");
        assert!(matches!(
            gw.complete(&req("zzz")),
            Err(GatewayError::MissingFixture { agent_tag: AgentTag::Coding, .. })
        ));
        assert_eq!(gw.network_calls(), 0);
    }

    #[test]
    fn transient_failures_are_retried() {
        let gw = Gateway::live(Arc::new(Flaky { failures: Mutex::new(3), status: 503 })).with_retry(fast());
        assert_eq!(gw.complete(&req("a")).unwrap().content, "fine");
        assert_eq!(gw.network_calls(), 4);
    }

    #[test]
    fn retries_exhaust() {
        let gw = Gateway::live(Arc::new(Flaky { failures: Mutex::new(10), status: 500 })).with_retry(fast());
        assert_eq!(
            gw.complete(&req("a")),
            Err(GatewayError::Provider { status: Some(500), body: "busy".into() })
        );
        assert_eq!(gw.network_calls(), 4);
    }

    #[test]
    fn permanent_failures_are_not_retried() {
        let gw = Gateway::live(Arc::new(Flaky { failures: Mutex::new(1), status: 401 })).with_retry(fast());
        assert!(gw.complete(&req("a")).is_err());
        assert_eq!(gw.network_calls(), 1);
    }

    #[test]
    fn record_persists_and_then_serves_from_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let gw = Gateway::record(
            Arc::new(Flaky { failures: Mutex::new(0), status: 500 }),
            ReplayStore::open_append(&path).unwrap(),
        );
        gw.complete(&req("a")).unwrap();
        gw.complete(&req("a")).unwrap();
        assert_eq!(gw.network_calls(), 1);
        drop(gw);
        let replay = Gateway::replay(ReplayStore::open_read_only(&path).unwrap());
        assert_eq!(replay.complete(&req("a")).unwrap().content, "fine");
    }

    #[test]
    fn budget_is_enforced() {
        let gw = Gateway::live(Arc::new(Flaky { failures: Mutex::new(0), status: 500 }))
            .with_token_limit(Some(20));
        gw.complete(&req("a")).unwrap();
        assert_eq!(gw.tokens_used(), 15);
        gw.complete(&req("b")).unwrap();
        assert_eq!(
            gw.complete(&req("c")),
            Err(GatewayError::BudgetExceeded { used: 30, limit: 20 })
        );
    }

    #[test]
    fn modes_parse() {
        for m in [Mode::Live, Mode::Record, Mode::Replay] {
            assert_eq!(m.to_string().parse::<Mode>(), Ok(m));
        }
        assert!("stream".parse::<Mode>().is_err());
    }
}
