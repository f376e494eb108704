mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use common::FnProvider;
use mosaic_core::gateway::{
    ChatProvider, FinishReason, HttpProvider, ProviderKind, RetryPolicy, Role, TemplateStore, Usage,
};
use mosaic_core::{AgentTag, ChatRequest, ChatResponse, Gateway, GatewayError, Message, ReplayStore};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

/// Independent statement of the documented key layout.
fn reference_key(backend: &str, model: &str, temperature: f64, messages: &[(Role, String)]) -> String {
    fn put(buf: &mut Vec<u8>, bytes: &[u8]) {
        buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    let mut buf = b"mosaic-replay-v1".to_vec();
    put(&mut buf, backend.as_bytes());
    put(&mut buf, model.as_bytes());
    let t = if temperature == 0.0 { 0u64 } else { temperature.to_bits() };
    put(&mut buf, format!("{t:016x}").as_bytes());
    put(&mut buf, messages.len().to_string().as_bytes());
    for (role, content) in messages {
        let role = match role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        put(&mut buf, role.as_bytes());
        let mut normalized = String::new();
        let mut chars = content.chars().peekable();
        while let Some(c) = chars.next() {
            if c == '\r' {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                normalized.push('\n');
            } else {
                normalized.push(c);
            }
        }
        put(&mut buf, normalized.as_bytes());
    }
    Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
}

fn request(backend: &str, model: &str, t: f64, msgs: &[(Role, String)], tag: AgentTag) -> ChatRequest {
    let messages = msgs.iter().map(|(r, c)| Message::new(*r, c.clone())).collect();
    ChatRequest::new(backend, model, messages, t, 64, tag).unwrap()
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::User), Just(Role::Assistant), Just(Role::System)]
}

fn messages() -> impl Strategy<Value = Vec<(Role, String)>> {
    (
        "[a-z \\r\\n]{0,20}",
        proptest::collection::vec((role(), "[a-zA-Z0-9 \\r\\n\u{e9}]{0,30}"), 0..5),
    )
        .prop_map(|(sys, rest)| {
            let mut v = vec![(Role::System, sys)];
            v.extend(rest);
            v
        })
}

proptest! {
    #[test]
    fn replay_key_matches_reference(
        backend in "[a-z]{1,8}", model in "[a-z0-9.-]{1,12}", t in 0.0f64..2.0, msgs in messages()
    ) {
        let req = request(&backend, &model, t, &msgs, AgentTag::Coding);
        prop_assert_eq!(req.replay_key(), reference_key(&backend, &model, t, &msgs));
    }

    #[test]
    fn replay_key_ignores_line_ending_style(msgs in messages()) {
        let msgs: Vec<_> = msgs.into_iter().map(|(r, c)| (r, c.replace('\r', ""))).collect();
        let crlf: Vec<_> = msgs.iter().map(|(r, c)| (*r, c.replace('\n', "\r\n"))).collect();
        let a = request("b", "m", 0.0, &msgs, AgentTag::Coding);
        let b = request("b", "m", 0.0, &crlf, AgentTag::Debugger);
        prop_assert_eq!(a.replay_key(), b.replay_key());
    }

    #[test]
    fn replay_key_separates_fields(a in "[ab]{0,4}", b in "[ab]{0,4}") {
        // moving bytes between adjacent fields must change the key
        let left = request(&format!("x{a}"), &b, 0.0, &[(Role::System, String::new())], AgentTag::Coding);
        let right = request("x", &format!("{a}{b}"), 0.0, &[(Role::System, String::new())], AgentTag::Coding);
        prop_assert_eq!(left.replay_key() == right.replay_key(), a.is_empty());
    }
}

#[test]
fn replay_key_pinned_value() {
    let req = request(
        "openai",
        "gpt-4o",
        0.0,
        &[(Role::System, "You are a helpful assistant.".into()), (Role::User, "hi".into())],
        AgentTag::Rationale,
    );
    assert_eq!(req.replay_key(), "b38b22c9c58224a4eec2becd072211aa18de2dd99c8250cd5c1bb5ac1bb8e46e");
    assert_eq!(req.replay_key(), reference_key("openai", "gpt-4o", -0.0, &[
        (Role::System, "You are a helpful assistant.".into()),
        (Role::User, "hi".into()),
    ]));
}

fn simple(text: &str) -> ChatRequest {
    request("b", "m", 0.0, &[(Role::System, "s".into()), (Role::User, text.into())], AgentTag::Coding)
}

#[test]
fn record_then_replay_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/store.jsonl");
    let provider = FnProvider::new(|r: &ChatRequest| {
        let mut resp = ChatResponse::stop(format!("echo {}", r.messages[1].content));
        resp.usage = Usage { prompt_tokens: 3, completion_tokens: 4 };
        resp
    });
    let recorder = Gateway::record(provider.clone(), ReplayStore::open_append(&path).unwrap());
    let first = recorder.complete(&simple("a")).unwrap();
    recorder.complete(&simple("a")).unwrap();
    recorder.complete(&simple("b")).unwrap();
    assert_eq!(provider.calls(), 2, "store hits are not re-sent");
    assert_eq!(recorder.tokens_used(), 21);

    let replay = Gateway::replay(ReplayStore::open_read_only(&path).unwrap());
    assert_eq!(replay.complete(&simple("a")).unwrap(), first);
    assert_eq!(replay.network_calls(), 0);
    match replay.complete(&simple("zzz")) {
        Err(GatewayError::MissingFixture { agent_tag, .. }) => assert_eq!(agent_tag, AgentTag::Coding),
        other => panic!("expected MissingFixture, got {other:?}"),
    }
}

#[test]
fn conflicting_store_lines_are_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let store = ReplayStore::open_append(&path).unwrap();
    store.insert(&simple("a"), &ChatResponse::stop("one")).unwrap();
    assert!(matches!(
        store.insert(&simple("a"), &ChatResponse::stop("two")),
        Err(GatewayError::StoreCorruption { .. })
    ));
    let line = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("{line}{}", line.replace("\"one\"", "\"two\""))).unwrap();
    assert!(matches!(ReplayStore::open_read_only(&path), Err(GatewayError::StoreCorruption { .. })));
}

#[test]
fn token_budget_stops_calls() {
    let provider = FnProvider::new(|_: &ChatRequest| {
        let mut r = ChatResponse::stop("x");
        r.usage = Usage { prompt_tokens: 60, completion_tokens: 0 };
        r
    });
    let gw = Gateway::live(provider).with_token_limit(Some(100));
    gw.complete(&simple("1")).unwrap();
    gw.complete(&simple("2")).unwrap();
    assert_eq!(gw.complete(&simple("3")), Err(GatewayError::BudgetExceeded { used: 120, limit: 100 }));
}

#[test]
fn template_rendering_with_role_markers() {
    let store = TemplateStore::from_map([(
        "t",
        "@@# comment\n@@ system\nYou help.\n!UPPER be brief about {TOPIC}.\n\n@@ user\nTopic: {TOPIC} {not_a_placeholder}\n",
    )]);
    let mut b = std::collections::HashMap::new();
    b.insert("TOPIC", "waves {X}".to_string());
    let msgs = store.render("t", &b).unwrap();
    assert_eq!(msgs.len(), 2);
    assert_eq!(msgs[0].content, "You help.\nBE BRIEF ABOUT waves {X}.");
    assert_eq!(msgs[1].content, "Topic: waves {X} {not_a_placeholder}");
    assert_eq!(store.render("t", &Default::default()), Err(GatewayError::UnboundPlaceholder("TOPIC".into())));
    assert_eq!(store.render("nope", &b), Err(GatewayError::UnknownTemplate("nope".into())));
}

#[test]
fn bundled_templates_cover_every_agent() {
    let store = common::templates();
    for name in mosaic_core::agent::templates::ALL {
        assert!(store.contains(name), "missing template {name}");
    }
}

/// One-shot HTTP server answering each connection from `replies` in order.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(head + &String::from_utf8(buf).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

#[test]
fn openai_shape_over_http() {
    let body = r#"{"choices":[{"message":{"content":"hello"},"finish_reason":"length"}],"usage":{"prompt_tokens":7,"completion_tokens":2}}"#;
    let (url, seen, handle) = serve(vec![(200, body.into())]);
    let provider = HttpProvider::new(ProviderKind::OpenAiCompatible, url, "sk-test", Duration::from_secs(5));
    let resp = provider.send(&simple("q")).unwrap();
    handle.join().unwrap();
    assert_eq!(resp.content, "hello");
    assert_eq!(resp.finish_reason, FinishReason::Length);
    assert_eq!(resp.usage.total(), 9);
    let req = seen.lock().unwrap()[0].clone();
    assert!(req.starts_with("POST /chat/completions "));
    assert!(req.to_ascii_lowercase().contains("authorization: bearer sk-test"));
    assert!(req.contains(r#""temperature":0.0"#));
}

#[test]
fn anthropic_shape_over_http() {
    let body = r#"{"content":[{"type":"text","text":"hi "},{"type":"text","text":"there"}],"stop_reason":"end_turn","usage":{"input_tokens":4,"output_tokens":1}}"#;
    let (url, seen, handle) = serve(vec![(200, body.into())]);
    let provider = HttpProvider::new(ProviderKind::AnthropicCompatible, url, "key", Duration::from_secs(5));
    let resp = provider.send(&simple("q")).unwrap();
    handle.join().unwrap();
    assert_eq!(resp.content, "hi there");
    let req = seen.lock().unwrap()[0].to_ascii_lowercase();
    assert!(req.starts_with("post /v1/messages "));
    assert!(req.contains("x-api-key: key") && req.contains("anthropic-version: 2023-06-01"));
    assert!(req.contains(r#""system":"s""#));
}

#[test]
fn transient_http_errors_are_retried() {
    let ok = r#"{"choices":[{"message":{"content":"done"},"finish_reason":"stop"}]}"#;
    let (url, _, handle) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, ok.into())]);
    let provider = Arc::new(HttpProvider::new(ProviderKind::OpenAiCompatible, url, "k", Duration::from_secs(5)));
    let gw = Gateway::live(provider).with_retry(RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(5) });
    assert_eq!(gw.complete(&simple("q")).unwrap().content, "done");
    assert_eq!(gw.network_calls(), 3);
    handle.join().unwrap();
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _, handle) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let provider = Arc::new(HttpProvider::new(ProviderKind::OpenAiCompatible, url, "k", Duration::from_secs(5)));
    let gw = Gateway::live(provider).with_retry(RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(5) });
    match gw.complete(&simple("q")) {
        Err(GatewayError::Provider { status: Some(401), body }) => assert!(body.contains("bad key")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(gw.network_calls(), 1);
    handle.join().unwrap();
}
