use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command as ProcessCommand, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::{
    decode_reply, encode_command, encode_payload, Command, ExecStatus, ExecutionOutcome,
    ExecutionPayload, Sandbox, SandboxError, SandboxFactory, WorkerReply,
};
use crate::eval::ErrorClass;

/// Extra time granted to the worker to report its own timeout before the
/// client kills it.
const REPLY_GRACE: Duration = Duration::from_secs(1);
const PING_TIMEOUT: Duration = Duration::from_secs(30);

struct Worker {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<String>,
}

impl Worker {
    fn launch(command: &[String]) -> Result<Worker, SandboxError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| SandboxError::Launch("empty worker command".into()))?;
        let mut child = ProcessCommand::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SandboxError::Launch(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut worker = Worker { child, stdin, replies: rx };
        worker.send(&encode_command(Command::Ping))?;
        match worker.recv(PING_TIMEOUT)? {
            Some(line) if decode_reply(&line)? == WorkerReply::Pong => Ok(worker),
            Some(line) => Err(SandboxError::Launch(format!("unexpected ping reply {line:?}"))),
            None => Err(SandboxError::Launch("worker did not answer ping".into())),
        }
    }

    fn send(&mut self, line: &str) -> Result<(), SandboxError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| SandboxError::Transport(format!("write to worker: {e}")))
    }

    /// `Ok(None)` on timeout; an error when the worker closed its output.
    fn recv(&mut self, timeout: Duration) -> Result<Option<String>, SandboxError> {
        match self.replies.recv_timeout(timeout) {
            Ok(line) => Ok(Some(line)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => {
                Err(SandboxError::Transport("worker exited unexpectedly".into()))
            }
        }
    }

    fn shutdown(mut self) {
        let _ = self.send(&encode_command(Command::Shutdown));
        for _ in 0..20 {
            if matches!(self.child.try_wait(), Ok(Some(_))) {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Drives an external worker process over its stdin/stdout.
///
/// If the worker fails to answer within the payload timeout plus a grace
/// period it is killed, the payload is reported as `timeout`, and a fresh
/// worker is started for the next request.
pub struct ProcessSandbox {
    command: Vec<String>,
    worker: Option<Worker>,
}

impl ProcessSandbox {
    pub fn launch(command: Vec<String>) -> Result<Self, SandboxError> {
        let worker = Worker::launch(&command)?;
        Ok(ProcessSandbox { command, worker: Some(worker) })
    }

    fn worker(&mut self) -> Result<&mut Worker, SandboxError> {
        if self.worker.is_none() {
            self.worker = Some(Worker::launch(&self.command)?);
        }
        Ok(self.worker.as_mut().expect("worker present"))
    }

    pub fn ping(&mut self) -> Result<bool, SandboxError> {
        let worker = self.worker()?;
        worker.send(&encode_command(Command::Ping))?;
        match worker.recv(PING_TIMEOUT)? {
            Some(line) => Ok(decode_reply(&line)? == WorkerReply::Pong),
            None => Ok(false),
        }
    }

    /// Sends an arbitrary line and returns the raw reply.
    pub fn exchange_raw(&mut self, line: &str) -> Result<Option<String>, SandboxError> {
        let worker = self.worker()?;
        worker.send(line)?;
        worker.recv(PING_TIMEOUT)
    }

    /// Asks the worker to exit and returns its exit code.
    pub fn shutdown(mut self) -> Option<i32> {
        let mut worker = self.worker.take()?;
        let _ = worker.send(&encode_command(Command::Shutdown));
        worker.child.wait().ok().and_then(|s| s.code())
    }
}

impl Sandbox for ProcessSandbox {
    fn execute(&mut self, payload: &ExecutionPayload) -> Result<ExecutionOutcome, SandboxError> {
        let deadline = Duration::from_secs_f64(payload.timeout_s.max(0.0)) + REPLY_GRACE;
        let worker = self.worker()?;
        worker.send(&encode_payload(payload))?;
        let reply = match worker.recv(deadline) {
            Ok(Some(line)) => line,
            Ok(None) => {
                if let Some(w) = self.worker.take() {
                    w.kill();
                }
                return Ok(ExecutionOutcome {
                    request_id: payload.request_id.clone(),
                    status: ExecStatus::Timeout,
                    error_class: Some(ErrorClass::Timeout),
                    traceback: format!("TimeoutError: worker did not answer within {:.1}s", deadline.as_secs_f64()),
                    test_results: Vec::new(),
                    wall_time_s: deadline.as_secs_f64(),
                });
            }
            Err(e) => {
                if let Some(w) = self.worker.take() {
                    w.kill();
                }
                return Err(e);
            }
        };
        match decode_reply(&reply)? {
            WorkerReply::Outcome(o) if o.request_id == payload.request_id => o.normalized(),
            WorkerReply::Outcome(o) => Err(SandboxError::Protocol(format!(
                "reply for request {:?} while waiting for {:?}",
                o.request_id, payload.request_id
            ))),
            WorkerReply::BadRequest(m) => Err(SandboxError::BadRequest(m)),
            WorkerReply::Pong => Err(SandboxError::Protocol("pong in reply to payload".into())),
        }
    }
}

impl Drop for ProcessSandbox {
    fn drop(&mut self) {
        if let Some(worker) = self.worker.take() {
            worker.shutdown();
        }
    }
}

pub struct ProcessSandboxFactory {
    command: Vec<String>,
}

impl ProcessSandboxFactory {
    pub fn new(command: Vec<String>) -> Self {
        ProcessSandboxFactory { command }
    }
}

impl SandboxFactory for ProcessSandboxFactory {
    fn spawn(&self) -> Result<Box<dyn Sandbox>, SandboxError> {
        Ok(Box::new(ProcessSandbox::launch(self.command.clone())?))
    }
}
