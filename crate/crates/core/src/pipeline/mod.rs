//! Student-side solving: for each subproblem in order, Rationale, then
//! Coding, then the debug loop. Accepted code feeds the execution preamble
//! and the context window of later steps.

mod agents;
mod ccw;
mod debug;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentRuntime, Transcript};
use crate::eval::ErrorClass;
use crate::gateway::{AgentTag, GatewayError, Mode};
use crate::model::{Domain, MainProblem, SubProblem};
use crate::sandbox::{ExecutionOutcome, Sandbox, SandboxError, SandboxFactory};
use crate::teacher::{select_exemplars, DomainMemory};

pub use agents::{generate_code, generate_rationale, summarize_for_ccw};
pub use ccw::{sanitize_summary, CcwEntry, CcwError, ContextWindow, DEFAULT_MAX_SUMMARY_CHARS};
pub use debug::{debug_loop, request_id, Attempt, DebugRun};

pub const DEFAULT_K_DEBUG_ROUNDS: u32 = 3;
pub const DEFAULT_EXEMPLAR_LIMIT: usize = 2;
pub const DEFAULT_SANDBOX_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("step {step_index}: {source}")]
    Gateway { step_index: u32, source: GatewayError },
    #[error("step {step_index}: {agent} reply was cut off at the token limit")]
    Truncated { step_index: u32, agent: AgentTag },
    #[error("step {step_index}: rationale still empty after a re-prompt")]
    EmptyRationale { step_index: u32 },
    #[error("step {step_index}: generated code does not match the required signature")]
    SignatureMismatch { step_index: u32, code: String },
    #[error("step {step_index}: {source}")]
    Sandbox { step_index: u32, source: SandboxError },
    #[error("step {step_index}: {source}")]
    Ccw { step_index: u32, source: CcwError },
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Spawn(SandboxError),
}

impl PipelineError {
    /// Failures confined to one step. The chain records them and moves on;
    /// anything else aborts the rest of the problem.
    pub fn is_step_failure(&self) -> bool {
        matches!(self, PipelineError::EmptyRationale { .. } | PipelineError::SignatureMismatch { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k_debug_rounds: u32,
    pub exemplar_limit: usize,
    pub max_summary_chars: usize,
    pub sandbox_timeout: Duration,
    pub mode: Mode,
    /// Whether the Coding agent sees the step's test cases.
    pub expose_sample_tests: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_debug_rounds: DEFAULT_K_DEBUG_ROUNDS,
            exemplar_limit: DEFAULT_EXEMPLAR_LIMIT,
            max_summary_chars: DEFAULT_MAX_SUMMARY_CHARS,
            sandbox_timeout: DEFAULT_SANDBOX_TIMEOUT,
            mode: Mode::Replay,
            expose_sample_tests: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.sandbox_timeout.is_zero() {
            return Err(PipelineError::Config("sandbox_timeout must be positive".into()));
        }
        if self.max_summary_chars == 0 {
            return Err(PipelineError::Config("max_summary_chars must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubProblemResult {
    pub step_index: u32,
    pub rationale: String,
    pub attempts: Vec<Attempt>,
    pub accepted_code: Option<String>,
    pub final_outcome: ExecutionOutcome,
    /// Empty unless the step was accepted.
    #[serde(default)]
    pub ccw_summary: String,
}

impl SubProblemResult {
    pub fn passed(&self) -> bool {
        self.final_outcome.passed()
    }

    fn failed_before_execution(step_index: u32, rationale: String, outcome: ExecutionOutcome) -> Self {
        SubProblemResult {
            step_index,
            rationale,
            attempts: Vec::new(),
            accepted_code: None,
            final_outcome: outcome,
            ccw_summary: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub run_id: String,
    pub problem_id: String,
    pub domain: Domain,
    pub sub_results: Vec<SubProblemResult>,
    pub main_solved: bool,
    /// Set when an infrastructure failure skipped the remaining steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl ProblemResult {
    pub fn new(
        run_id: impl Into<String>,
        problem_id: impl Into<String>,
        domain: Domain,
        sub_results: Vec<SubProblemResult>,
    ) -> Self {
        let main_solved = !sub_results.is_empty() && sub_results.iter().all(SubProblemResult::passed);
        ProblemResult {
            run_id: run_id.into(),
            problem_id: problem_id.into(),
            domain,
            sub_results,
            main_solved,
            abort_reason: None,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("result serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Everything produced while solving one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemRun {
    pub result: ProblemResult,
    pub transcript: Transcript,
}

/// The domain whose memory serves this problem. Taken from the dataset
/// label; no model is consulted.
pub fn route_domain(problem: &MainProblem) -> Domain {
    if problem.domain == Domain::Unspecified {
        tracing::warn!(problem = %problem.problem_id, "unspecified domain; no exemplars will be used");
    }
    problem.domain
}

struct Chain {
    ccw: ContextWindow,
    accepted: Vec<String>,
}

impl Chain {
    fn preamble(&self) -> String {
        self.accepted.join("\n\n")
    }
}

/// Solves the subproblems of `problem` strictly in step order.
pub fn solve_problem(
    problem: &MainProblem,
    memory: &DomainMemory,
    runtime: &AgentRuntime<'_>,
    sandbox: &mut dyn Sandbox,
    config: &PipelineConfig,
    run_id: &str,
) -> ProblemRun {
    let domain = route_domain(problem);
    let exemplars = select_exemplars(memory, domain, config.exemplar_limit);
    let mut transcript = Transcript::default();
    let mut chain = Chain { ccw: ContextWindow::new(config.max_summary_chars), accepted: Vec::new() };
    let mut sub_results = Vec::with_capacity(problem.subproblems.len());
    let mut abort_reason: Option<String> = None;

    for sub in &problem.subproblems {
        let step = sub.step_index;
        if let Some(reason) = &abort_reason {
            let id = request_id(&problem.problem_id, step, 0);
            let outcome = ExecutionOutcome::skipped(id, format!("skipped: {reason}"));
            sub_results.push(SubProblemResult::failed_before_execution(step, String::new(), outcome));
            continue;
        }
        let mut rationale = String::new();
        match solve_step(problem, sub, &exemplars, &mut chain, runtime, sandbox, config, &mut transcript, &mut rationale) {
            Ok(result) => sub_results.push(result),
            Err(e) if e.is_step_failure() => {
                tracing::info!(problem = %problem.problem_id, step, error = %e, "step failed before execution");
                transcript.note(Some(step), e.to_string());
                let id = request_id(&problem.problem_id, step, 0);
                let outcome = ExecutionOutcome::rejected(id, ErrorClass::Other, e.to_string());
                sub_results.push(SubProblemResult::failed_before_execution(step, rationale, outcome));
            }
            Err(e) => {
                tracing::error!(problem = %problem.problem_id, step, error = %e, "aborting problem");
                transcript.note(Some(step), format!("abort: {e}"));
                let reason = e.to_string();
                let id = request_id(&problem.problem_id, step, 0);
                let outcome = ExecutionOutcome::skipped(id, format!("skipped: {reason}"));
                sub_results.push(SubProblemResult::failed_before_execution(step, rationale, outcome));
                abort_reason = Some(reason);
            }
        }
    }

    let mut result = ProblemResult::new(run_id, &problem.problem_id, domain, sub_results);
    result.abort_reason = abort_reason;
    ProblemRun { result, transcript }
}

#[allow(clippy::too_many_arguments)]
fn solve_step(
    problem: &MainProblem,
    sub: &SubProblem,
    exemplars: &[&crate::teacher::Exemplar],
    chain: &mut Chain,
    runtime: &AgentRuntime<'_>,
    sandbox: &mut dyn Sandbox,
    config: &PipelineConfig,
    transcript: &mut Transcript,
    rationale_out: &mut String,
) -> Result<SubProblemResult, PipelineError> {
    let step = sub.step_index;
    let rationale = generate_rationale(problem, sub, &chain.ccw, exemplars, runtime, transcript)?;
    rationale_out.clone_from(&rationale);
    let code = generate_code(problem, sub, &rationale, &chain.ccw, runtime, config, transcript)?;
    let run = debug_loop(problem, sub, code, &chain.preamble(), sandbox, runtime, config, transcript)?;
    let final_outcome = run.final_outcome().clone();
    let (accepted_code, ccw_summary) = if final_outcome.passed() {
        let summary = summarize_for_ccw(sub, &run.code, runtime, config, transcript);
        chain
            .ccw
            .push(CcwEntry { step_index: step, signature_raw: sub.signature.raw.clone(), summary: summary.clone() })
            .map_err(|source| PipelineError::Ccw { step_index: step, source })?;
        chain.accepted.push(run.code.clone());
        (Some(run.code), summary)
    } else {
        (None, String::new())
    };
    Ok(SubProblemResult {
        step_index: step,
        rationale,
        attempts: run.attempts,
        accepted_code,
        final_outcome,
        ccw_summary,
    })
}

/// Solves `problems` on up to `workers` threads, one sandbox per thread.
/// Results come back in input order.
pub fn solve_all(
    problems: &[&MainProblem],
    memory: &DomainMemory,
    runtime: &AgentRuntime<'_>,
    factory: &dyn SandboxFactory,
    config: &PipelineConfig,
    run_id: &str,
    workers: usize,
) -> Result<Vec<ProblemRun>, PipelineError> {
    config.validate()?;
    let workers = workers.clamp(1, problems.len().max(1));
    let sandboxes = (0..workers)
        .map(|_| factory.spawn())
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::Spawn)?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<ProblemRun>>> = problems.iter().map(|_| Mutex::new(None)).collect();

    thread::scope(|scope| {
        for mut sandbox in sandboxes {
            let (next, slots) = (&next, &slots);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(problem) = problems.get(i) else { break };
                tracing::info!(problem = %problem.problem_id, "solving");
                let run = solve_problem(problem, memory, runtime, sandbox.as_mut(), config, run_id);
                *slots[i].lock().expect("slot lock") = Some(run);
            });
        }
    });

    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every problem solved"))
        .collect())
}
