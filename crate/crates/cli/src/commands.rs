use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use mosaic_core::eval::{render_report, ReportFormat};
use mosaic_core::gateway::{ChatProvider, HttpProvider, ProviderKind};
use mosaic_core::model::parse_problem_set;
use mosaic_core::sandbox::{ProcessSandboxFactory, SandboxScript, ScriptedSandboxFactory};
use mosaic_core::teacher::GroundTruthRecord;
use mosaic_core::{
    aggregate, solve_all, AgentRuntime, DomainMemory, EvaluationReport, Gateway, LlmSettings, MainProblem, Mode,
    ProblemResult, ProblemSet, ReplayStore, RunMetadata, SandboxFactory, TemplateStore,
};

use crate::config::{RunConfig, SandboxKind};

/// Process exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok,
    /// A problem was aborted by an infrastructure failure.
    Aborted,
    /// Some reflections failed; memory holds the rest.
    Partial,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Ok => 0,
            Exit::Aborted => 1,
            Exit::Partial => 2,
        }
    }
}

/// Side channels a command may use.
pub struct Env<'a> {
    pub stdout: &'a mut dyn Write,
    /// Overrides the HTTP provider in live and record modes.
    pub provider: Option<Arc<dyn ChatProvider>>,
    /// Program used to run `stub-worker` when the process sandbox has no
    /// explicit command.
    pub self_exe: Option<PathBuf>,
}

fn load_problems(config: &RunConfig) -> Result<ProblemSet> {
    let path = config.dataset()?;
    let text = fs::read_to_string(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let set = parse_problem_set(&text, config.split).with_context(|| format!("parsing dataset {}", path.display()))?;
    for id in &config.problems {
        if set.get(id).is_none() {
            bail!("unknown problem id {id:?} in {}", path.display());
        }
    }
    Ok(set)
}

fn selected<'a>(set: &'a ProblemSet, config: &RunConfig) -> Vec<&'a MainProblem> {
    set.problems
        .iter()
        .filter(|p| config.problems.is_empty() || config.problems.contains(&p.problem_id))
        .collect()
}

fn settings(config: &RunConfig) -> LlmSettings {
    LlmSettings {
        backend_id: config.backend.clone(),
        model_id: config.model.clone(),
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    }
}

fn gateway(config: &RunConfig, injected: Option<Arc<dyn ChatProvider>>) -> Result<Gateway> {
    let provider = || -> Result<Arc<dyn ChatProvider>> {
        if let Some(p) = injected.clone() {
            return Ok(p);
        }
        let kind = ProviderKind::for_backend(&config.backend);
        let timeout = Duration::from_secs_f64(config.http_timeout_s);
        let http = HttpProvider::from_env(&config.backend, kind, timeout)
            .map_err(|e| anyhow::anyhow!("{} mode needs a provider: {e}", config.mode))?;
        Ok(Arc::new(http))
    };
    let store = &config.replay_store;
    let gateway = match config.mode {
        Mode::Replay => Gateway::replay(
            ReplayStore::open_read_only(store).with_context(|| format!("opening replay store {}", store.display()))?,
        ),
        Mode::Record => Gateway::record(
            provider()?,
            ReplayStore::open_append(store).with_context(|| format!("opening replay store {}", store.display()))?,
        ),
        Mode::Live => Gateway::live(provider()?),
    };
    Ok(gateway.with_token_limit(config.token_limit))
}

fn sandbox_factory(config: &RunConfig, self_exe: Option<&Path>) -> Result<Box<dyn SandboxFactory>> {
    let sandbox = &config.sandbox;
    match sandbox.kind {
        SandboxKind::Stub => {
            let script = sandbox
                .script
                .as_deref()
                .context("the stub sandbox needs a script: set `script` in the [sandbox] table")?;
            Ok(Box::new(ScriptedSandboxFactory::new(SandboxScript::load(script)?)))
        }
        SandboxKind::Process => {
            let command = if !sandbox.command.is_empty() {
                sandbox.command.clone()
            } else if let Some(script) = &sandbox.script {
                let exe = match self_exe {
                    Some(p) => p.to_path_buf(),
                    None => std::env::current_exe().context("locating the mosaic binary")?,
                };
                vec![
                    exe.to_string_lossy().into_owned(),
                    "stub-worker".into(),
                    "--script".into(),
                    script.to_string_lossy().into_owned(),
                ]
            } else {
                bail!("no sandbox worker configured: set `command` or `script` in the [sandbox] table");
            };
            Ok(Box::new(ProcessSandboxFactory::new(command)))
        }
    }
}

fn templates(config: &RunConfig) -> Result<TemplateStore> {
    TemplateStore::from_dir(&config.templates)
        .with_context(|| format!("loading templates from {}", config.templates.display()))
}

/// Builds domain memory from the validation split and its ground truth.
pub fn teach(config: &RunConfig, env: Env<'_>) -> Result<Exit> {
    let set = load_problems(config)?;
    let gt_path = config.ground_truth()?;
    let gt_text =
        fs::read_to_string(gt_path).with_context(|| format!("reading ground truth {}", gt_path.display()))?;
    let ground_truth = GroundTruthRecord::parse_jsonl(&gt_text)
        .map_err(|e| anyhow::anyhow!("parsing ground truth {}: {e}", gt_path.display()))?;
    let ground_truth: Vec<_> = if config.problems.is_empty() {
        ground_truth
    } else {
        ground_truth.into_iter().filter(|r| config.problems.contains(&r.problem_id)).collect()
    };

    let templates = templates(config)?;
    let gateway = gateway(config, env.provider)?;
    let settings = settings(config);
    let runtime = AgentRuntime::new(&gateway, &templates, &settings);
    let population = mosaic_core::populate_memory(&set, &ground_truth, &runtime)?;
    population.memory.save(&config.memory)?;

    let out = env.stdout;
    writeln!(out, "memory: {}", config.memory.display())?;
    for (domain, n) in population.memory.counts() {
        writeln!(out, "  {:<18} {n}", domain.display_name())?;
    }
    writeln!(out, "reflected: {}", population.reflected)?;
    for failure in &population.failures {
        writeln!(out, "failed: {failure}")?;
    }
    writeln!(out, "network calls: {}", gateway.network_calls())?;
    Ok(if population.failures.is_empty() { Exit::Ok } else { Exit::Partial })
}

fn metadata(config: &RunConfig) -> RunMetadata {
    RunMetadata {
        run_id: config.run_id.clone(),
        backend: config.backend.clone(),
        model: config.model.clone(),
        k_debug_rounds: config.k_debug_rounds,
        mode: config.mode.to_string(),
        timestamp: match config.mode {
            Mode::Replay => None,
            Mode::Live | Mode::Record => {
                Some(humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string())
            }
        },
    }
}

/// Runs the pipeline over the selected test problems and writes the run
/// directory.
pub fn solve(config: &RunConfig, env: Env<'_>) -> Result<Exit> {
    let set = load_problems(config)?;
    let problems = selected(&set, config);
    if !config.memory.is_dir() {
        bail!("memory directory {} not found; run `mosaic teach` first", config.memory.display());
    }
    let memory = DomainMemory::load(&config.memory)?;
    let templates = templates(config)?;
    let gateway = gateway(config, env.provider)?;
    let factory = sandbox_factory(config, env.self_exe.as_deref())?;
    let settings = settings(config);
    let runtime = AgentRuntime::new(&gateway, &templates, &settings);
    let pipeline = config.pipeline();
    tracing::info!(run_id = %config.run_id, problems = problems.len(), mode = %config.mode, "solving");

    let runs = solve_all(&problems, &memory, &runtime, factory.as_ref(), &pipeline, &config.run_id, config.workers)?;

    let dir = config.run_dir();
    let transcripts = dir.join("transcripts");
    if transcripts.exists() {
        fs::remove_dir_all(&transcripts).with_context(|| format!("clearing {}", transcripts.display()))?;
    }
    fs::create_dir_all(&transcripts).with_context(|| format!("creating {}", transcripts.display()))?;
    write(&dir.join("config.toml"), config.to_toml())?;
    let meta = metadata(config);
    write(&dir.join("run.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    let results: Vec<ProblemResult> = runs.iter().map(|r| r.result.clone()).collect();
    write(&dir.join("result.jsonl"), results_jsonl(&results))?;
    for run in &runs {
        write(&transcripts.join(format!("{}.jsonl", run.result.problem_id)), run.transcript.to_jsonl())?;
    }
    let report = aggregate(meta, &results)?;
    write_report(&dir, &report, env.stdout)?;
    writeln!(env.stdout, "network calls: {}", gateway.network_calls())?;

    let mut exit = Exit::Ok;
    for result in &results {
        if let Some(reason) = &result.abort_reason {
            writeln!(env.stdout, "aborted {}: {reason}", result.problem_id)?;
            exit = Exit::Aborted;
        }
    }
    Ok(exit)
}

/// Re-aggregates an existing run directory.
pub fn report(config: &RunConfig, env: Env<'_>) -> Result<Exit> {
    let dir = config.run_dir();
    let meta_path = dir.join("run.json");
    let meta: RunMetadata = serde_json::from_str(
        &fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("parsing {}", meta_path.display()))?;
    let results = read_results(&dir.join("result.jsonl"))?;
    let report = aggregate(meta, &results)?;
    write_report(&dir, &report, env.stdout)?;
    Ok(Exit::Ok)
}

pub fn results_jsonl(results: &[ProblemResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
        .collect()
}

pub fn read_results(path: &Path) -> Result<Vec<ProblemResult>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn write_report(dir: &Path, report: &EvaluationReport, out: &mut dyn Write) -> Result<()> {
    let table = render_report(report, ReportFormat::Table);
    write(&dir.join("report.json"), render_report(report, ReportFormat::Structured))?;
    write(&dir.join("report.txt"), table.clone())?;
    out.write_all(table.as_bytes())?;
    Ok(())
}

fn write(path: &Path, contents: String) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
