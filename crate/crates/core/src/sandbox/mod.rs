//! Client side of the execution worker protocol.
//!
//! Candidates run out of process in the target runtime. The orchestrator
//! speaks one JSON object per line over the worker's stdin/stdout:
//!
//! * request: `{request_id, preamble, code, tests:[...], timeout_s, allowed_dependencies:[...]}`
//! * response: `{request_id, status, error_class, traceback, test_results:[{passed, deviation}], wall_time_s}`
//! * `{"cmd":"ping"}` answers `{"ok":true}`; `{"cmd":"shutdown"}` exits 0.
//! * a malformed line answers `{"error":"bad_request", ...}` and the worker stays up.
//!
//! [`ProcessSandbox`] drives a real worker; [`ScriptedSandbox`] is an
//! in-process stand-in that answers from a table of canned outcomes.

mod process;
mod stub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{extract_error_class, ErrorClass};
use crate::model::TestCase;

pub use process::{ProcessSandbox, ProcessSandboxFactory};
pub use stub::{serve, ScriptEntry, ScriptedSandbox, ScriptedSandboxFactory, SandboxScript};

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to launch sandbox worker: {0}")]
    Launch(String),
    #[error("sandbox transport failure: {0}")]
    Transport(String),
    #[error("sandbox protocol violation: {0}")]
    Protocol(String),
    #[error("sandbox rejected request: {0}")]
    BadRequest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPayload {
    pub request_id: String,
    pub preamble: String,
    pub code: String,
    pub tests: Vec<TestCase>,
    pub timeout_s: f64,
    #[serde(default)]
    pub allowed_dependencies: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Passed,
    SemanticFail,
    SyntacticFail,
    Timeout,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub passed: bool,
    #[serde(default)]
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub request_id: String,
    pub status: ExecStatus,
    #[serde(default)]
    pub error_class: Option<ErrorClass>,
    #[serde(default)]
    pub traceback: String,
    #[serde(default)]
    pub test_results: Vec<TestResult>,
    #[serde(default)]
    pub wall_time_s: f64,
}

impl ExecutionOutcome {
    pub fn passed(&self) -> bool {
        self.status == ExecStatus::Passed
    }

    pub fn is_semantic(&self) -> bool {
        self.status == ExecStatus::SemanticFail
    }

    /// Failures the debugger may repair: anything that stopped execution.
    pub fn is_syntactic(&self) -> bool {
        matches!(self.status, ExecStatus::SyntacticFail | ExecStatus::Timeout)
    }

    pub fn skipped(request_id: impl Into<String>, reason: impl Into<String>) -> Self {
        ExecutionOutcome {
            request_id: request_id.into(),
            status: ExecStatus::Skipped,
            error_class: Some(ErrorClass::Other),
            traceback: reason.into(),
            test_results: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    /// A failure detected before execution, e.g. a signature mismatch.
    pub fn rejected(request_id: impl Into<String>, class: ErrorClass, reason: impl Into<String>) -> Self {
        ExecutionOutcome {
            request_id: request_id.into(),
            status: ExecStatus::SyntacticFail,
            error_class: Some(class),
            traceback: reason.into(),
            test_results: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    /// Largest numeric deviation across the test results, if any.
    pub fn max_deviation(&self) -> Option<f64> {
        self.test_results
            .iter()
            .filter_map(|t| t.deviation)
            .fold(None, |acc, d| Some(acc.map_or(d, |m: f64| m.max(d))))
    }

    /// The error class used for reporting: the declared one, or a class
    /// implied by the status and traceback.
    pub fn effective_error_class(&self) -> Option<ErrorClass> {
        match self.status {
            ExecStatus::Passed => None,
            ExecStatus::SemanticFail => Some(ErrorClass::Assertion),
            ExecStatus::Timeout => Some(ErrorClass::Timeout),
            ExecStatus::SyntacticFail | ExecStatus::Skipped => Some(
                self.error_class
                    .unwrap_or_else(|| extract_error_class(&self.traceback)),
            ),
        }
    }

    /// Fills in a missing error class and checks the outcome invariants.
    pub fn normalized(mut self) -> Result<Self, SandboxError> {
        if self.error_class.is_none() {
            self.error_class = self.effective_error_class();
        }
        match self.status {
            ExecStatus::Passed if self.test_results.iter().any(|t| !t.passed) => {
                return Err(SandboxError::Protocol(format!(
                    "request {}: status passed with a failing test",
                    self.request_id
                )));
            }
            ExecStatus::SyntacticFail if self.error_class == Some(ErrorClass::Assertion) => {
                return Err(SandboxError::Protocol(format!(
                    "request {}: syntactic failure labelled Assertion",
                    self.request_id
                )));
            }
            _ => {}
        }
        if let Some(d) = self.test_results.iter().filter_map(|t| t.deviation).find(|d| !d.is_finite() || *d < 0.0) {
            return Err(SandboxError::Protocol(format!(
                "request {}: invalid deviation {d}",
                self.request_id
            )));
        }
        Ok(self)
    }
}

/// One worker instance. A worker handles one payload at a time.
pub trait Sandbox: Send {
    fn execute(&mut self, payload: &ExecutionPayload) -> Result<ExecutionOutcome, SandboxError>;
}

/// Creates independent workers, one per concurrent solver thread.
pub trait SandboxFactory: Send + Sync {
    fn spawn(&self) -> Result<Box<dyn Sandbox>, SandboxError>;
}

/// Control commands understood by every worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Ping,
    Shutdown,
}

#[derive(Debug, Serialize, Deserialize)]
struct CommandRequest {
    cmd: Command,
}

/// Parsed worker reply.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkerReply {
    Outcome(ExecutionOutcome),
    Pong,
    BadRequest(String),
}

pub fn encode_payload(payload: &ExecutionPayload) -> String {
    serde_json::to_string(payload).expect("payload serializes")
}

pub fn encode_command(cmd: Command) -> String {
    serde_json::to_string(&CommandRequest { cmd }).expect("command serializes")
}

pub fn decode_reply(line: &str) -> Result<WorkerReply, SandboxError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| SandboxError::Protocol(format!("unparseable reply {line:?}: {e}")))?;
    if value.get("ok") == Some(&serde_json::Value::Bool(true)) {
        return Ok(WorkerReply::Pong);
    }
    if let Some(err) = value.get("error") {
        let detail = value
            .get("detail")
            .and_then(|d| d.as_str())
            .unwrap_or_default();
        return Ok(WorkerReply::BadRequest(format!("{}: {detail}", err.as_str().unwrap_or("error"))));
    }
    serde_json::from_value(value)
        .map(WorkerReply::Outcome)
        .map_err(|e| SandboxError::Protocol(format!("malformed outcome: {e}")))
}
