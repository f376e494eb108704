#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use mosaic_core::gateway::{ChatProvider, ProviderFailure, Role, TemplateStore};
use mosaic_core::model::{Param, TestCase};
use mosaic_core::sandbox::{ExecStatus, TestResult};
use mosaic_core::{
    ChatRequest, ChatResponse, Domain, ExecutionOutcome, ExecutionPayload, FunctionSignature, MainProblem, Sandbox,
    SandboxError, SubProblem, Target,
};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn templates() -> TemplateStore {
    TemplateStore::from_dir(&repo_root().join("templates")).expect("templates load")
}

pub fn sig(name: &str, params: &[&str]) -> FunctionSignature {
    FunctionSignature {
        name: name.into(),
        params: params.iter().map(|p| Param { name: (*p).into(), description: String::new() }).collect(),
        returns: String::new(),
        raw: format!("def {name}({}):", params.join(", ")),
    }
}

/// A problem whose step k implements `f{k}(x)`.
pub fn problem(id: &str, domain: Domain, steps: usize) -> MainProblem {
    MainProblem {
        problem_id: id.into(),
        domain,
        title: format!("Problem {id}"),
        description: "Compute a chain of quantities.".into(),
        allowed_dependencies: vec!["numpy".into()],
        subproblems: (1..=steps as u32)
            .map(|k| SubProblem {
                step_index: k,
                prompt: format!("Compute quantity {k} from x. Use the previous result."),
                background: String::new(),
                signature: sig(&format!("f{k}"), &["x"]),
                tests: vec![TestCase {
                    call_expression: format!("f{k}(1.0)"),
                    target: Target::Number(k as f64),
                    rel_tol: 1e-8,
                    abs_tol: 1e-8,
                }],
            })
            .collect(),
    }
}

/// Canonical good code for `f{k}` in [`problem`].
pub fn good_code(step: u32) -> String {
    format!("def f{step}(x):\n    secret_body_{step} = {step} * x\n    return secret_body_{step}")
}

pub fn system_text(req: &ChatRequest) -> &str {
    &req.messages[0].content
}

/// Content of the first user message.
pub fn user_text(req: &ChatRequest) -> &str {
    req.messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

pub fn is_summary_request(req: &ChatRequest) -> bool {
    system_text(req).contains("summarise code")
}

/// The step index named by a `def fK(` signature in the user prompt.
pub fn step_of(req: &ChatRequest) -> u32 {
    let text = user_text(req);
    let marker = ["Implement:\ndef f", "Required signature:\ndef f", "Function to implement:\ndef f", "Signature:\ndef f"]
        .iter()
        .find_map(|m| text.find(m).map(|i| i + m.len()))
        .expect("prompt names a signature");
    text[marker..].chars().take_while(char::is_ascii_digit).collect::<String>().parse().unwrap()
}

pub fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```")
}

/// Provider backed by a closure; counts calls.
pub struct FnProvider<F> {
    pub reply: F,
    pub calls: AtomicUsize,
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

/// A cooperative model: plans, writes [`good_code`], summarises.
pub fn cooperative(req: &ChatRequest) -> ChatResponse {
    if is_summary_request(req) {
        let k = step_of(req);
        return ChatResponse::stop(format!("Returns quantity {k}. Extra sentence here."));
    }
    match req.agent_tag {
        mosaic_core::AgentTag::Rationale => ChatResponse::stop("1. Multiply.\n2. Return."),
        mosaic_core::AgentTag::Coding | mosaic_core::AgentTag::Debugger => {
            ChatResponse::stop(fenced(&good_code(step_of(req))))
        }
        mosaic_core::AgentTag::SelfReflection => ChatResponse::stop("STEP 1: nothing"),
    }
}

pub fn outcome(payload: &ExecutionPayload, status: ExecStatus) -> ExecutionOutcome {
    let (class, traceback, tests) = match status {
        ExecStatus::Passed => (None, String::new(), vec![TestResult { passed: true, deviation: Some(0.0) }]),
        ExecStatus::SemanticFail => (
            None,
            "AssertionError".to_string(),
            vec![TestResult { passed: false, deviation: Some(0.5) }],
        ),
        _ => (None, "Traceback (most recent call last):\nNameError: name 'y' is not defined".to_string(), vec![]),
    };
    ExecutionOutcome {
        request_id: payload.request_id.clone(),
        status,
        error_class: class,
        traceback,
        test_results: tests,
        wall_time_s: 0.01,
    }
}

type Handler = Box<dyn FnMut(&ExecutionPayload) -> Result<ExecutionOutcome, SandboxError> + Send>;

/// Sandbox backed by a closure; keeps every payload.
pub struct FnSandbox {
    pub handler: Handler,
    pub payloads: Arc<Mutex<Vec<ExecutionPayload>>>,
}

impl FnSandbox {
    pub fn new(handler: impl FnMut(&ExecutionPayload) -> Result<ExecutionOutcome, SandboxError> + Send + 'static) -> Self {
        FnSandbox { handler: Box::new(handler), payloads: Arc::default() }
    }

    /// Passes exactly the [`good_code`] bodies; anything else is a NameError.
    pub fn strict() -> Self {
        FnSandbox::new(|p| {
            let step: u32 = p.request_id.split(':').nth(1).unwrap().parse().unwrap();
            let status = if p.code.trim() == good_code(step) { ExecStatus::Passed } else { ExecStatus::SyntacticFail };
            Ok(outcome(p, status))
        })
    }

    pub fn payloads(&self) -> Vec<ExecutionPayload> {
        self.payloads.lock().unwrap().clone()
    }
}

impl Sandbox for FnSandbox {
    fn execute(&mut self, payload: &ExecutionPayload) -> Result<ExecutionOutcome, SandboxError> {
        self.payloads.lock().unwrap().push(payload.clone());
        (self.handler)(payload)
    }
}
