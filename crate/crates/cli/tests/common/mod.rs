#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use mosaic_core::gateway::{ChatProvider, ProviderFailure, Role};
use mosaic_core::{AgentTag, ChatRequest, ChatResponse};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_dir() -> PathBuf {
    repo_root().join("fixtures/replay")
}

pub fn mosaic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mosaic"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("mosaic runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub const VELOCITY: &str =
    "import numpy as np\n\ndef velocity_components(v0, theta_deg):\n    theta = np.radians(theta_deg)\n    return v0 * np.cos(theta), v0 * np.sin(theta)";
pub const FLIGHT_BUGGY: &str =
    "def time_of_flight(v0, theta_deg, g):\n    _, vy = velocity_components(v0, theta)\n    return 2 * vy / g";
pub const FLIGHT: &str =
    "def time_of_flight(v0, theta_deg, g):\n    _, vy = velocity_components(v0, theta_deg)\n    return 2 * vy / g";
pub const RANGE: &str = "def horizontal_range(v0, theta_deg, g):\n    vx, _ = velocity_components(v0, theta_deg)\n    return vx * time_of_flight(v0, theta_deg, g)";

fn user_text(req: &ChatRequest) -> &str {
    req.messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("")
}

/// Function named right after the first marker found in the user prompt.
fn target_function(text: &str) -> &str {
    let markers = ["Implement:\ndef ", "Required signature:\ndef ", "Function to implement:\ndef ", "Signature:\ndef "];
    let start = markers
        .iter()
        .find_map(|m| text.find(m).map(|i| i + m.len()))
        .expect("prompt names a function");
    let rest = &text[start..];
    &rest[..rest.find('(').expect("signature has parameters")]
}

fn fenced(code: &str) -> String {
    format!("Here is the implementation.\n```python\n{code}\n```")
}

/// Scripted stand-in for the model used to record the replay fixture.
pub fn scripted_model(req: &ChatRequest) -> ChatResponse {
    let text = user_text(req);
    if req.messages[0].content.contains("summarise code") {
        let summary = match target_function(text) {
            "velocity_components" => "Returns the launch velocity components (vx, vy) for speed v0 and angle theta_deg.",
            "time_of_flight" => "Returns the flight time 2*vy/g for a projectile landing at launch height.",
            other => return ChatResponse::stop(format!("Returns the result of {other}.")),
        };
        return ChatResponse::stop(summary);
    }
    match req.agent_tag {
        AgentTag::SelfReflection => {
            let names = text
                .split("implemented by these functions: ")
                .nth(1)
                .and_then(|t| t.split(".\n").next())
                .expect("reflection prompt lists functions");
            let title = text.lines().next().unwrap_or("").trim_start_matches("Problem: ");
            let steps: String = names
                .split(", ")
                .enumerate()
                .map(|(i, n)| format!("STEP {}: compute the intermediate quantity with {n}\n", i + 1))
                .collect();
            ChatResponse::stop(format!("Summary: {title} from closed-form relations.\n{steps}"))
        }
        AgentTag::Rationale => ChatResponse::stop(match target_function(text) {
            "velocity_components" => "1. Convert theta_deg to radians.\n2. vx = v0 cos(theta), vy = v0 sin(theta).\n3. Return (vx, vy).",
            "time_of_flight" => "1. Get vy from velocity_components.\n2. Return 2 vy / g.",
            _ => "1. Get vx from velocity_components.\n2. Multiply by time_of_flight.",
        }),
        AgentTag::Coding => ChatResponse::stop(fenced(match target_function(text) {
            "velocity_components" => VELOCITY,
            "time_of_flight" => FLIGHT_BUGGY,
            _ => RANGE,
        })),
        AgentTag::Debugger => ChatResponse::stop(fenced(FLIGHT)),
    }
}

/// Provider backed by a closure; counts calls.
pub struct FnProvider<F> {
    reply: F,
    calls: AtomicUsize,
}

impl<F> FnProvider<F>
where
    F: Fn(&ChatRequest) -> ChatResponse + Send + Sync,
{
    pub fn new(reply: F) -> Arc<Self> {
        Arc::new(FnProvider { reply, calls: AtomicUsize::new(0) })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> ChatResponse + Send + Sync,
{
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok((self.reply)(req))
    }
}

/// Copies the fixture inputs (not the recordings) into `dir`.
pub fn copy_fixture_inputs(dir: &Path) {
    for name in ["test.jsonl", "validation.jsonl", "ground_truth.jsonl", "sandbox.jsonl"] {
        std::fs::copy(fixture_dir().join(name), dir.join(name)).unwrap();
    }
}
