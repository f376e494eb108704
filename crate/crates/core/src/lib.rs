//! Multi-agent orchestration engine for chained scientific code generation.
//!
//! A teacher pass distils validation problems into per-domain exemplar
//! memory. A student pass then solves test problems subproblem by
//! subproblem, with a Rationale agent, a Coding agent and a bounded Debugger
//! loop, passing earlier steps forward through a consolidated context
//! window. Every model call goes through a [`Gateway`] that can record and
//! replay exchanges, and every candidate runs in an out-of-process
//! [`Sandbox`].

pub mod agent;
pub mod eval;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod sandbox;
pub mod signature;
pub mod teacher;

pub use agent::{AgentRuntime, LlmSettings, Transcript, TranscriptEvent};
pub use eval::{aggregate, bin_deviation, extract_error_class, ErrorClass, EvaluationReport, PrecisionBin, RunMetadata};
pub use gateway::{AgentTag, ChatRequest, ChatResponse, Gateway, GatewayError, Message, Mode, ReplayStore, TemplateStore};
pub use model::{Domain, FunctionSignature, MainProblem, ProblemSet, Split, SubProblem, Target, TestCase};
pub use pipeline::{
    solve_all, solve_problem, ContextWindow, PipelineConfig, PipelineError, ProblemResult, ProblemRun,
    SubProblemResult,
};
pub use sandbox::{ExecStatus, ExecutionOutcome, ExecutionPayload, Sandbox, SandboxError, SandboxFactory};
pub use signature::validate_generated_signature;
pub use teacher::{populate_memory, select_exemplars, DomainMemory, Exemplar, TeacherError};
