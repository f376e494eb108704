use std::collections::HashSet;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    decode_reply, encode_payload, Command, CommandRequest, ExecStatus, ExecutionOutcome,
    ExecutionPayload, Sandbox, SandboxError, SandboxFactory, TestResult, WorkerReply,
};
use crate::eval::ErrorClass;

/// Canned outcome for one exact candidate body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub code: String,
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

/// Lookup table from candidate code (compared after trimming) to outcome.
/// Candidates with no entry fail with a syntactic `Other` outcome.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SandboxScript {
    pub entries: Vec<ScriptEntry>,
}

impl SandboxScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        SandboxScript { entries }
    }

    /// Reads a JSON Lines script file, one [`ScriptEntry`] per line.
    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SandboxError::Launch(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line).map_err(|e| {
                SandboxError::Launch(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Ok(SandboxScript { entries })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    fn outcome_for(&self, payload: &ExecutionPayload) -> ExecutionOutcome {
        let code = payload.code.trim();
        match self.entries.iter().find(|e| e.code.trim() == code) {
            Some(e) => ExecutionOutcome {
                request_id: payload.request_id.clone(),
                status: e.status,
                error_class: e.error_class,
                traceback: e.traceback.clone(),
                test_results: e.test_results.clone(),
                wall_time_s: e.wall_time_s,
            },
            None => {
                let digest = hex::encode(Sha256::digest(code.as_bytes()));
                ExecutionOutcome::rejected(
                    payload.request_id.clone(),
                    ErrorClass::Other,
                    format!("RuntimeError: no scripted outcome for candidate sha256:{}", &digest[..16]),
                )
            }
        }
    }
}

/// Protocol state for one worker session.
struct Session<'a> {
    script: &'a SandboxScript,
    seen: HashSet<String>,
}

impl Session<'_> {
    /// Answers one request line. The flag is true when the worker should exit.
    fn handle_line(&mut self, line: &str) -> (Option<String>, bool) {
        if let Ok(req) = serde_json::from_str::<CommandRequest>(line) {
            return match req.cmd {
                Command::Ping => (Some(r#"{"ok":true}"#.to_string()), false),
                Command::Shutdown => (None, true),
            };
        }
        let payload: ExecutionPayload = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(e) => return (Some(bad_request(&e.to_string())), false),
        };
        if !payload.timeout_s.is_finite() || payload.timeout_s <= 0.0 {
            return (Some(bad_request("timeout_s must be positive")), false);
        }
        if !self.seen.insert(payload.request_id.clone()) {
            return (
                Some(bad_request(&format!("duplicate request_id {:?}", payload.request_id))),
                false,
            );
        }
        let outcome = self.script.outcome_for(&payload);
        (Some(serde_json::to_string(&outcome).expect("outcome serializes")), false)
    }
}

fn bad_request(detail: &str) -> String {
    serde_json::json!({"error": "bad_request", "detail": detail}).to_string()
}

/// Runs the worker protocol over a line stream until `shutdown` or EOF.
pub fn serve<R: BufRead, W: Write>(script: &SandboxScript, input: R, mut output: W) -> io::Result<()> {
    let mut session = Session { script, seen: HashSet::new() };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, exit) = session.handle_line(&line);
        if let Some(reply) = reply {
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
        if exit {
            break;
        }
    }
    Ok(())
}

/// In-process worker answering from a [`SandboxScript`]. Every call is
/// round-tripped through the wire encoding.
pub struct ScriptedSandbox {
    script: Arc<SandboxScript>,
    seen: HashSet<String>,
}

impl ScriptedSandbox {
    pub fn new(script: Arc<SandboxScript>) -> Self {
        ScriptedSandbox { script, seen: HashSet::new() }
    }

    /// Sends one raw protocol line and returns the raw reply line.
    pub fn exchange(&mut self, line: &str) -> Option<String> {
        let mut session = Session { script: &self.script, seen: std::mem::take(&mut self.seen) };
        let (reply, _) = session.handle_line(line);
        self.seen = session.seen;
        reply
    }
}

impl Sandbox for ScriptedSandbox {
    fn execute(&mut self, payload: &ExecutionPayload) -> Result<ExecutionOutcome, SandboxError> {
        let reply = self
            .exchange(&encode_payload(payload))
            .ok_or_else(|| SandboxError::Protocol("no reply".into()))?;
        match decode_reply(&reply)? {
            WorkerReply::Outcome(o) => o.normalized(),
            WorkerReply::BadRequest(m) => Err(SandboxError::BadRequest(m)),
            WorkerReply::Pong => Err(SandboxError::Protocol("pong in reply to payload".into())),
        }
    }
}

#[derive(Clone)]
pub struct ScriptedSandboxFactory {
    script: Arc<SandboxScript>,
}

impl ScriptedSandboxFactory {
    pub fn new(script: SandboxScript) -> Self {
        ScriptedSandboxFactory { script: Arc::new(script) }
    }
}

impl SandboxFactory for ScriptedSandboxFactory {
    fn spawn(&self) -> Result<Box<dyn Sandbox>, SandboxError> {
        Ok(Box::new(ScriptedSandbox::new(self.script.clone())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Target, TestCase};

    fn script() -> SandboxScript {
        SandboxScript::new(vec![
            ScriptEntry {
                code: "def f(x): return x*2".into(),
                status: ExecStatus::Passed,
                error_class: None,
                traceback: String::new(),
                test_results: vec![TestResult { passed: true, deviation: Some(0.0) }],
                wall_time_s: 0.01,
            },
            ScriptEntry {
                code: "def f(x): return x/0".into(),
                status: ExecStatus::SyntacticFail,
                error_class: None,
                traceback: "Traceback (most recent call last):\nZeroDivisionError: division by zero".into(),
                test_results: vec![],
                wall_time_s: 0.01,
            },
        ])
    }

    fn payload(id: &str, code: &str) -> ExecutionPayload {
        ExecutionPayload {
            request_id: id.into(),
            preamble: String::new(),
            code: code.into(),
            tests: vec![TestCase {
                call_expression: "f(3)".into(),
                target: Target::Number(6.0),
                rel_tol: 0.0,
                abs_tol: 0.0,
            }],
            timeout_s: 5.0,
            allowed_dependencies: vec![],
        }
    }

    #[test]
    fn scripted_outcomes() {
        let mut sb = ScriptedSandbox::new(Arc::new(script()));
        let o = sb.execute(&payload("1", "  def f(x): return x*2\n")).unwrap();
        assert_eq!(o.status, ExecStatus::Passed);
        assert_eq!(o.request_id, "1");
        let o = sb.execute(&payload("2", "def f(x): return x/0")).unwrap();
        assert_eq!(o.status, ExecStatus::SyntacticFail);
        assert_eq!(o.error_class, Some(ErrorClass::ZeroDivision));
        let o = sb.execute(&payload("3", "def g(): pass")).unwrap();
        assert_eq!(o.error_class, Some(ErrorClass::Other));
    }

    #[test]
    fn duplicate_request_ids_are_bad_requests() {
        let mut sb = ScriptedSandbox::new(Arc::new(script()));
        sb.execute(&payload("1", "x")).unwrap();
        assert!(matches!(sb.execute(&payload("1", "x")), Err(SandboxError::BadRequest(_))));
    }

    #[test]
    fn serve_loop_speaks_protocol() {
        let input = format!(
            "{}\nthis is not json\n{}\n{}\n{}\n",
            r#"{"cmd":"ping"}"#,
            encode_payload(&payload("a", "def f(x): return x*2")),
            r#"{"cmd":"shutdown"}"#,
            r#"{"cmd":"ping"}"#,
        );
        let mut out = Vec::new();
        serve(&script(), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3, "nothing is answered after shutdown: {lines:?}");
        assert_eq!(decode_reply(lines[0]).unwrap(), WorkerReply::Pong);
        assert!(matches!(decode_reply(lines[1]).unwrap(), WorkerReply::BadRequest(_)));
        assert!(matches!(decode_reply(lines[2]).unwrap(), WorkerReply::Outcome(o) if o.passed()));
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(&path, script().to_jsonl()).unwrap();
        assert_eq!(SandboxScript::load(&path).unwrap(), script());
    }
}
