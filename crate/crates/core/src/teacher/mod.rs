//! Teacher side of the distillation setup.
//!
//! Ground-truth solutions from the validation split are reflected on as a
//! whole (never one step at a time) to produce pseudocode exemplars, which
//! are kept in a separate memory per scientific domain.

mod pseudocode;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{templates, AgentRuntime, Bindings, Transcript};
use crate::gateway::{AgentTag, FinishReason, GatewayError};
use crate::model::{Domain, MainProblem, ProblemSet, Split};

pub use pseudocode::{missing_names, parse_pseudocode, ParsedPseudocode};

/// Re-prompts allowed after a reflection reply that fails to parse.
pub const REFLECTION_REPROMPTS: usize = 2;
pub const MEMORY_EXTENSION: &str = "mem";

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("problem {problem_id:?} is not in the validation split")]
    SplitViolation { problem_id: String },
    #[error("ground truth for {problem_id:?} names unknown step {step_index}")]
    UnknownStep { problem_id: String, step_index: u32 },
    #[error("reflection input mixes problems {0:?} and {1:?}")]
    MixedProblems(String, String),
    #[error("no ground-truth records given")]
    NoRecords,
    #[error("reflection for {problem_id:?} still malformed after re-prompts: {reason}")]
    MalformedReflection { problem_id: String, reason: String },
    #[error("reflection for {problem_id:?} was truncated at the token limit")]
    Truncated { problem_id: String },
    #[error("reflection for {problem_id:?}: {source}")]
    Gateway {
        problem_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("memory file {path}: {reason}")]
    Memory { path: PathBuf, reason: String },
}

/// Reference solution for one validation subproblem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub problem_id: String,
    pub step_index: u32,
    #[serde(default)]
    pub rationale: String,
    pub code: String,
}

impl GroundTruthRecord {
    /// Reads a JSON Lines file of records.
    pub fn parse_jsonl(text: &str) -> Result<Vec<GroundTruthRecord>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect()
    }
}

/// Whole-problem pseudocode distilled from one validation problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub domain: Domain,
    pub source_problem_id: String,
    pub problem_summary: String,
    pub pseudocode: Vec<String>,
}

impl Exemplar {
    /// Text block used when the exemplar is shown to the rationale agent.
    pub fn render(&self) -> String {
        let mut out = format!("Problem: {}\n", self.problem_summary);
        for (i, step) in self.pseudocode.iter().enumerate() {
            let _ = writeln!(out, "STEP {}: {}", i + 1, step);
        }
        out
    }
}

/// Per-domain exemplar lists. `Unspecified` never holds exemplars.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainMemory {
    by_domain: BTreeMap<Domain, Vec<Exemplar>>,
}

impl DomainMemory {
    pub fn new() -> Self {
        DomainMemory::default()
    }

    /// Adds an exemplar to its own domain's list. Returns false (and stores
    /// nothing) for `Unspecified` exemplars.
    pub fn insert(&mut self, exemplar: Exemplar) -> bool {
        if exemplar.domain == Domain::Unspecified {
            return false;
        }
        self.by_domain.entry(exemplar.domain).or_default().push(exemplar);
        true
    }

    pub fn get(&self, domain: Domain) -> &[Exemplar] {
        if domain == Domain::Unspecified {
            return &[];
        }
        self.by_domain.get(&domain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_domain.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> Vec<(Domain, usize)> {
        Domain::BENCHMARK.iter().map(|&d| (d, self.get(d).len())).collect()
    }

    pub fn file_path(dir: &Path, domain: Domain) -> PathBuf {
        dir.join(format!("{}.{MEMORY_EXTENSION}", domain.slug()))
    }

    /// Writes one `<domain>.mem` file per benchmark domain (empty files for
    /// empty domains). Records are written in stored order.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, TeacherError> {
        let fail = |path: &Path, e: std::io::Error| TeacherError::Memory {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| fail(dir, e))?;
        let mut written = Vec::new();
        for domain in Domain::BENCHMARK {
            let path = Self::file_path(dir, domain);
            let body: String = self
                .get(domain)
                .iter()
                .map(|e| serde_json::to_string(e).expect("exemplar serializes") + "\n")
                .collect();
            std::fs::write(&path, body).map_err(|e| fail(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }

    /// Loads whatever domain files exist in `dir`. Each record must carry
    /// the domain of the file it was read from.
    pub fn load(dir: &Path) -> Result<Self, TeacherError> {
        let mut memory = DomainMemory::new();
        for domain in Domain::BENCHMARK {
            let path = Self::file_path(dir, domain);
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(TeacherError::Memory { path, reason: e.to_string() }),
            };
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let exemplar: Exemplar = serde_json::from_str(line).map_err(|e| TeacherError::Memory {
                    path: path.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
                if exemplar.domain != domain {
                    return Err(TeacherError::Memory {
                        path: path.clone(),
                        reason: format!("line {}: exemplar belongs to {}", i + 1, exemplar.domain),
                    });
                }
                memory.insert(exemplar);
            }
        }
        Ok(memory)
    }
}

/// Up to `limit` exemplars of `domain`, in stored order.
pub fn select_exemplars(memory: &DomainMemory, domain: Domain, limit: usize) -> Vec<&Exemplar> {
    memory
        .get(domain)
        .iter()
        .filter(|e| e.domain == domain)
        .take(limit)
        .collect()
}

/// Concatenates the whole problem, step by step, with its ground truth.
/// Steps without a rationale fall back to their prompt and background.
fn whole_rationale(problem: &MainProblem, records: &[&GroundTruthRecord]) -> String {
    let mut out = String::new();
    for sub in &problem.subproblems {
        let _ = writeln!(out, "### Subproblem {} `{}`", sub.step_index, sub.signature.raw.trim());
        let record = records.iter().find(|r| r.step_index == sub.step_index);
        match record.map(|r| r.rationale.trim()).filter(|r| !r.is_empty()) {
            Some(rationale) => {
                let _ = writeln!(out, "{rationale}");
            }
            None => {
                let _ = writeln!(out, "{}", sub.prompt.trim());
                if !sub.background.trim().is_empty() {
                    let _ = writeln!(out, "{}", sub.background.trim());
                }
            }
        }
        if let Some(r) = record {
            let _ = writeln!(out, "Ground-truth code:\n```python\n{}\n```", r.code.trim_end());
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

fn first_paragraph(text: &str) -> String {
    text.trim()
        .split("\n\n")
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Distils one validation problem into an exemplar with a single
/// self-reflection exchange over the concatenated rationale, re-prompting
/// up to [`REFLECTION_REPROMPTS`] times when the reply lacks `STEP` lines or
/// skips a subproblem's function.
pub fn reflect(
    validation: &ProblemSet,
    records: &[GroundTruthRecord],
    runtime: &AgentRuntime<'_>,
) -> Result<Exemplar, TeacherError> {
    let first = records.first().ok_or(TeacherError::NoRecords)?;
    if let Some(other) = records.iter().find(|r| r.problem_id != first.problem_id) {
        return Err(TeacherError::MixedProblems(first.problem_id.clone(), other.problem_id.clone()));
    }
    let problem_id = first.problem_id.clone();
    let problem = match (validation.split, validation.get(&problem_id)) {
        (Split::Validation, Some(p)) => p,
        _ => return Err(TeacherError::SplitViolation { problem_id }),
    };
    if let Some(r) = records.iter().find(|r| problem.subproblem(r.step_index).is_none()) {
        return Err(TeacherError::UnknownStep { problem_id, step_index: r.step_index });
    }

    let refs: Vec<&GroundTruthRecord> = records.iter().collect();
    let names: Vec<&str> = problem.subproblems.iter().map(|s| s.signature.name.as_str()).collect();
    let mut bindings = Bindings::new();
    bindings.insert("DOMAIN", problem.domain.display_name().to_string());
    bindings.insert("TITLE", problem.title.clone());
    bindings.insert("DESCRIPTION", problem.description.clone());
    bindings.insert("STEP_COUNT", problem.subproblems.len().to_string());
    bindings.insert("FUNCTION_NAMES", names.join(", "));
    bindings.insert("RATIONALE", whole_rationale(problem, &refs));

    let gateway_err = |source| TeacherError::Gateway { problem_id: problem_id.clone(), source };
    let mut messages = runtime
        .render(templates::SELF_REFLECTION, &bindings)
        .map_err(gateway_err)?;
    let mut transcript = Transcript::default();
    let mut reason = String::new();
    for attempt in 0..=REFLECTION_REPROMPTS {
        if attempt > 0 {
            let previous = transcript
                .chats(AgentTag::SelfReflection)
                .last()
                .map(|(_, r)| r.content.clone())
                .unwrap_or_default();
            messages = runtime
                .reprompt_messages(messages, &previous, &reason)
                .map_err(gateway_err)?;
        }
        let response = runtime
            .chat(AgentTag::SelfReflection, templates::SELF_REFLECTION, None, messages.clone(), &mut transcript)
            .map_err(gateway_err)?;
        if response.finish_reason == FinishReason::Length {
            return Err(TeacherError::Truncated { problem_id });
        }
        let parsed = parse_pseudocode(&response.content);
        if parsed.steps.is_empty() {
            reason = "The reply contained no `STEP k:` lines.".to_string();
            continue;
        }
        let missing = missing_names(&parsed.steps, names.iter().copied());
        if !missing.is_empty() {
            reason = format!(
                "The pseudocode must cover the whole problem; it never mentions: {}.",
                missing.join(", ")
            );
            continue;
        }
        let problem_summary = if parsed.summary.is_empty() {
            first_paragraph(if problem.description.trim().is_empty() { &problem.title } else { &problem.description })
        } else {
            parsed.summary
        };
        return Ok(Exemplar {
            domain: problem.domain,
            source_problem_id: problem_id,
            problem_summary,
            pseudocode: parsed.steps,
        });
    }
    Err(TeacherError::MalformedReflection { problem_id, reason })
}

/// Result of populating memory: the memory plus any problems whose
/// reflection failed.
#[derive(Debug, Default)]
pub struct Population {
    pub memory: DomainMemory,
    pub reflected: usize,
    pub failures: Vec<TeacherError>,
}

/// Reflects every validation problem that has ground truth, in parallel,
/// and stores the exemplars in validation-set order.
///
/// Ground truth naming a problem outside the validation split fails the
/// whole call before any model request is made.
pub fn populate_memory(
    validation: &ProblemSet,
    ground_truth: &[GroundTruthRecord],
    runtime: &AgentRuntime<'_>,
) -> Result<Population, TeacherError> {
    if let Some(r) = ground_truth.iter().find(|r| {
        validation.split != Split::Validation || validation.get(&r.problem_id).is_none()
    }) {
        return Err(TeacherError::SplitViolation { problem_id: r.problem_id.clone() });
    }
    let groups: Vec<Vec<GroundTruthRecord>> = validation
        .problems
        .iter()
        .map(|p| {
            ground_truth
                .iter()
                .filter(|r| r.problem_id == p.problem_id)
                .cloned()
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect();

    let outcomes: Vec<Result<Exemplar, TeacherError>> =
        groups.par_iter().map(|g| reflect(validation, g, runtime)).collect();

    let mut population = Population::default();
    for outcome in outcomes {
        match outcome {
            Ok(exemplar) => {
                population.reflected += 1;
                if !population.memory.insert(exemplar.clone()) {
                    tracing::warn!(problem_id = %exemplar.source_problem_id, "exemplar has no domain; not stored");
                }
            }
            Err(e) => population.failures.push(e),
        }
    }
    Ok(population)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(domain: Domain, id: &str) -> Exemplar {
        Exemplar {
            domain,
            source_problem_id: id.into(),
            problem_summary: "s".into(),
            pseudocode: vec!["a".into()],
        }
    }

    #[test]
    fn select_in_stored_order() {
        let mut m = DomainMemory::new();
        for i in 0..4 {
            m.insert(ex(Domain::Physics, &format!("p{i}")));
        }
        m.insert(ex(Domain::Biology, "b"));
        let ids: Vec<&str> = select_exemplars(&m, Domain::Physics, 2)
            .iter()
            .map(|e| e.source_problem_id.as_str())
            .collect();
        assert_eq!(ids, vec!["p0", "p1"]);
        assert!(select_exemplars(&m, Domain::Unspecified, 5).is_empty());
        assert!(select_exemplars(&m, Domain::Chemistry, 5).is_empty());
    }

    #[test]
    fn unspecified_is_never_stored() {
        let mut m = DomainMemory::new();
        assert!(!m.insert(ex(Domain::Unspecified, "u")));
        assert!(m.is_empty());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DomainMemory::new();
        m.insert(ex(Domain::Physics, "p"));
        m.insert(ex(Domain::Mathematics, "m"));
        let files = m.save(dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        assert_eq!(DomainMemory::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn load_rejects_foreign_records() {
        let dir = tempfile::tempdir().unwrap();
        let line = serde_json::to_string(&ex(Domain::Biology, "b")).unwrap();
        std::fs::write(DomainMemory::file_path(dir.path(), Domain::Physics), line).unwrap();
        assert!(matches!(DomainMemory::load(dir.path()), Err(TeacherError::Memory { .. })));
    }

    #[test]
    fn ground_truth_jsonl() {
        let text = "{\"problem_id\":\"v1\",\"step_index\":1,\"code\":\"def f(): pass\"}\n\n";
        let recs = GroundTruthRecord::parse_jsonl(text).unwrap();
        assert_eq!(recs[0].rationale, "");
        assert!(GroundTruthRecord::parse_jsonl("{").is_err());
    }
}
