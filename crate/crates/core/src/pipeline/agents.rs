//! Student-side agent calls: rationale, coding, and CCW summaries.

use super::ccw::{sanitize_summary, ContextWindow};
use super::{PipelineConfig, PipelineError};
use crate::agent::{templates, AgentRuntime, Bindings, Transcript};
use crate::gateway::{AgentTag, FinishReason};
use crate::model::{MainProblem, SubProblem};
use crate::signature::{extract_code_block, validate_generated_signature};
use crate::teacher::Exemplar;

fn main_problem_text(problem: &MainProblem) -> String {
    match (problem.title.trim(), problem.description.trim()) {
        ("", d) => d.to_string(),
        (t, "") => t.to_string(),
        (t, d) => format!("{t}\n{d}"),
    }
}

fn render_exemplars(exemplars: &[&Exemplar]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| format!("Example {}\n{}", i + 1, e.render()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_tests(sub: &SubProblem) -> String {
    sub.tests
        .iter()
        .map(|t| format!("{} == {}", t.call_expression, t.target.to_json()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Bindings shared by the rationale and coding prompts.
fn step_bindings(problem: &MainProblem, sub: &SubProblem, ccw: &ContextWindow) -> Bindings {
    let mut b = Bindings::new();
    b.insert("DOMAIN", problem.domain.display_name().to_string());
    b.insert("MAIN_PROBLEM", main_problem_text(problem));
    b.insert("STEP_INDEX", sub.step_index.to_string());
    b.insert("STEP_COUNT", problem.subproblems.len().to_string());
    b.insert("PROMPT", sub.prompt.trim().to_string());
    b.insert("BACKGROUND", sub.background.trim().to_string());
    b.insert("SIGNATURE", sub.signature.raw.trim_end().to_string());
    b.insert("CCW", ccw.render());
    b.insert("ALLOWED_DEPENDENCIES", problem.allowed_dependencies.join(", "));
    b
}

/// Produces a step-by-step plan for one subproblem. Blank replies get one
/// re-prompt before failing with `EmptyRationale`.
pub fn generate_rationale(
    problem: &MainProblem,
    sub: &SubProblem,
    ccw: &ContextWindow,
    exemplars: &[&Exemplar],
    runtime: &AgentRuntime<'_>,
    transcript: &mut Transcript,
) -> Result<String, PipelineError> {
    let step = sub.step_index;
    let mut bindings = step_bindings(problem, sub, ccw);
    bindings.insert("EXEMPLARS", render_exemplars(exemplars));
    let gw = |source| PipelineError::Gateway { step_index: step, source };

    let mut messages = runtime.render(templates::RATIONALE, &bindings).map_err(gw)?;
    for attempt in 0..2 {
        let response = runtime
            .chat(AgentTag::Rationale, templates::RATIONALE, Some(step), messages.clone(), transcript)
            .map_err(gw)?;
        if response.finish_reason == FinishReason::Length {
            return Err(PipelineError::Truncated { step_index: step, agent: AgentTag::Rationale });
        }
        if !response.content.trim().is_empty() {
            return Ok(response.content.trim().to_string());
        }
        if attempt == 0 {
            messages = runtime
                .reprompt_messages(messages, &response.content, "The reply was empty. Write the step-by-step plan.")
                .map_err(gw)?;
        }
    }
    Err(PipelineError::EmptyRationale { step_index: step })
}

/// Turns a rationale into code for the step's fixed signature. The first
/// fenced block is taken as the code; a reply that does not define the
/// expected function gets one re-prompt before `SignatureMismatch`.
pub fn generate_code(
    problem: &MainProblem,
    sub: &SubProblem,
    rationale: &str,
    ccw: &ContextWindow,
    runtime: &AgentRuntime<'_>,
    config: &PipelineConfig,
    transcript: &mut Transcript,
) -> Result<String, PipelineError> {
    let step = sub.step_index;
    let mut bindings = step_bindings(problem, sub, ccw);
    bindings.insert("RATIONALE", rationale.to_string());
    bindings.insert(
        "TESTS",
        if config.expose_sample_tests { render_tests(sub) } else { String::new() },
    );
    let gw = |source| PipelineError::Gateway { step_index: step, source };

    let mut messages = runtime.render(templates::CODING, &bindings).map_err(gw)?;
    let mut last_code = String::new();
    for attempt in 0..2 {
        let response = runtime
            .chat(AgentTag::Coding, templates::CODING, Some(step), messages.clone(), transcript)
            .map_err(gw)?;
        if response.finish_reason == FinishReason::Length {
            return Err(PipelineError::Truncated { step_index: step, agent: AgentTag::Coding });
        }
        last_code = extract_code_block(&response.content);
        if validate_generated_signature(&last_code, &sub.signature) {
            return Ok(last_code);
        }
        if attempt == 0 {
            let reason = format!(
                "The code must define `{}` with exactly {} parameter(s), matching: {}",
                sub.signature.name,
                sub.signature.arity(),
                sub.signature.raw.trim()
            );
            messages = runtime
                .reprompt_messages(messages, &response.content, &reason)
                .map_err(gw)?;
        }
    }
    Err(PipelineError::SignatureMismatch { step_index: step, code: last_code })
}

/// One-sentence summary of an accepted step for the context window. Falls
/// back to the first sentence of the step prompt when the model is
/// unavailable or replies with nothing usable.
pub fn summarize_for_ccw(
    sub: &SubProblem,
    accepted_code: &str,
    runtime: &AgentRuntime<'_>,
    config: &PipelineConfig,
    transcript: &mut Transcript,
) -> String {
    let max = config.max_summary_chars;
    let fallback = || sanitize_summary(&sub.prompt, max);
    let mut bindings = Bindings::new();
    bindings.insert("PROMPT", sub.prompt.trim().to_string());
    bindings.insert("SIGNATURE", sub.signature.raw.trim_end().to_string());
    bindings.insert("CODE", accepted_code.to_string());
    bindings.insert("MAX_CHARS", max.to_string());

    let reply = runtime
        .render(templates::SUMMARIZE, &bindings)
        .and_then(|messages| {
            runtime.chat(AgentTag::Rationale, templates::SUMMARIZE, Some(sub.step_index), messages, transcript)
        });
    match reply {
        Ok(r) => {
            let summary = sanitize_summary(&r.content, max);
            if summary.is_empty() {
                fallback()
            } else {
                summary
            }
        }
        Err(e) => {
            tracing::warn!(step = sub.step_index, error = %e, "summary unavailable; using prompt");
            transcript.note(Some(sub.step_index), format!("summary fallback: {e}"));
            fallback()
        }
    }
}
