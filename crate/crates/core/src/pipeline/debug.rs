//! Execute, and on syntactic failures ask the Debugger for a repair.

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::agent::{templates, AgentRuntime, Bindings, Transcript, TranscriptEvent};
use crate::gateway::{AgentTag, FinishReason};
use crate::model::{MainProblem, SubProblem};
use crate::sandbox::{ExecutionOutcome, ExecutionPayload, Sandbox};
use crate::signature::extract_code_block;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub code: String,
    pub outcome: ExecutionOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebugRun {
    /// The last candidate executed.
    pub code: String,
    pub attempts: Vec<Attempt>,
}

impl DebugRun {
    pub fn final_outcome(&self) -> &ExecutionOutcome {
        &self.attempts.last().expect("debug loop executes at least once").outcome
    }
}

pub fn request_id(problem_id: &str, step_index: u32, attempt: usize) -> String {
    format!("{problem_id}:{step_index}:{attempt}")
}

/// Runs `code` after `preamble`. Syntactic failures are handed to the
/// Debugger at most `k_debug_rounds` times; passes, semantic failures and
/// skips end the loop at once. Never executes more than `k + 1` times.
#[allow(clippy::too_many_arguments)]
pub fn debug_loop(
    problem: &MainProblem,
    sub: &SubProblem,
    code: String,
    preamble: &str,
    sandbox: &mut dyn Sandbox,
    runtime: &AgentRuntime<'_>,
    config: &PipelineConfig,
    transcript: &mut Transcript,
) -> Result<DebugRun, PipelineError> {
    let step = sub.step_index;
    let mut code = code;
    let mut attempts = Vec::new();
    let mut repairs = 0u32;
    loop {
        let attempt = attempts.len();
        let payload = ExecutionPayload {
            request_id: request_id(&problem.problem_id, step, attempt),
            preamble: preamble.to_string(),
            code: code.clone(),
            tests: sub.tests.clone(),
            timeout_s: config.sandbox_timeout.as_secs_f64(),
            allowed_dependencies: problem.allowed_dependencies.clone(),
        };
        let outcome = sandbox
            .execute(&payload)
            .and_then(ExecutionOutcome::normalized)
            .map_err(|source| PipelineError::Sandbox { step_index: step, source })?;
        transcript.push(TranscriptEvent::Execution {
            step_index: step,
            attempt,
            code: code.clone(),
            outcome: outcome.clone(),
        });
        let repairable = outcome.is_syntactic();
        attempts.push(Attempt { code: code.clone(), outcome });
        if !repairable || repairs >= config.k_debug_rounds {
            return Ok(DebugRun { code, attempts });
        }
        code = repair(sub, &code, &attempts[attempt].outcome, runtime, transcript)?;
        repairs += 1;
    }
}

fn repair(
    sub: &SubProblem,
    code: &str,
    outcome: &ExecutionOutcome,
    runtime: &AgentRuntime<'_>,
    transcript: &mut Transcript,
) -> Result<String, PipelineError> {
    let step = sub.step_index;
    let gw = |source| PipelineError::Gateway { step_index: step, source };
    let mut bindings = Bindings::new();
    bindings.insert("CODE", code.to_string());
    bindings.insert("TRACEBACK", outcome.traceback.trim_end().to_string());
    bindings.insert("SIGNATURE", sub.signature.raw.trim_end().to_string());
    bindings.insert("PROMPT", sub.prompt.trim().to_string());
    let messages = runtime.render(templates::DEBUGGER, &bindings).map_err(gw)?;
    let response = runtime
        .chat(AgentTag::Debugger, templates::DEBUGGER, Some(step), messages, transcript)
        .map_err(gw)?;
    if response.finish_reason == FinishReason::Length {
        return Err(PipelineError::Truncated { step_index: step, agent: AgentTag::Debugger });
    }
    Ok(extract_code_block(&response.content))
}
