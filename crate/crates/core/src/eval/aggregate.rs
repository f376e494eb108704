use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::precision::{bin_deviation, DomainError, PrecisionBin};
use super::taxonomy::ErrorClass;
use crate::model::Domain;
use crate::pipeline::ProblemResult;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("result for problem {problem_id:?} belongs to run {found:?}, expected {expected:?}")]
    MixedRun {
        problem_id: String,
        expected: String,
        found: String,
    },
    #[error("problem {problem_id:?} step {step_index}: {source}")]
    Deviation {
        problem_id: String,
        step_index: u32,
        source: DomainError,
    },
}

/// Identifies the run a report describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub backend: String,
    pub model: String,
    pub k_debug_rounds: u32,
    pub mode: String,
    /// RFC 3339 start time. Omitted for replay runs so their artifacts stay
    /// byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub main_solved: usize,
    pub main_total: usize,
    pub sub_solved: usize,
    pub sub_total: usize,
}

impl DomainCounts {
    fn add(&mut self, other: &DomainCounts) {
        self.main_solved += other.main_solved;
        self.main_total += other.main_total;
        self.sub_solved += other.sub_solved;
        self.sub_total += other.sub_total;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: Domain,
    #[serde(flatten)]
    pub counts: DomainCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: RunMetadata,
    pub total: DomainCounts,
    /// The five benchmark domains in fixed order, then `unspecified` when it
    /// has any problems.
    pub domains: Vec<DomainRow>,
    pub error_histogram: BTreeMap<ErrorClass, usize>,
    pub precision_histogram: BTreeMap<PrecisionBin, usize>,
}

impl EvaluationReport {
    pub fn empty(metadata: RunMetadata) -> Self {
        EvaluationReport {
            metadata,
            total: DomainCounts::default(),
            domains: Domain::BENCHMARK
                .iter()
                .map(|&domain| DomainRow { domain, counts: DomainCounts::default() })
                .collect(),
            error_histogram: ErrorClass::ALL.iter().map(|&c| (c, 0)).collect(),
            precision_histogram: PrecisionBin::ALL.iter().map(|&b| (b, 0)).collect(),
        }
    }

    pub fn domain(&self, domain: Domain) -> DomainCounts {
        self.domains
            .iter()
            .find(|r| r.domain == domain)
            .map(|r| r.counts)
            .unwrap_or_default()
    }

    pub fn syntactic_errors(&self) -> usize {
        self.error_histogram
            .iter()
            .filter(|(c, _)| c.is_syntactic())
            .map(|(_, n)| n)
            .sum()
    }

    pub fn semantic_errors(&self) -> usize {
        self.error_histogram
            .get(&ErrorClass::Assertion)
            .copied()
            .unwrap_or(0)
    }
}

/// Aggregates the results of one run.
///
/// A main problem counts as solved only if it has subproblems and all of
/// them passed; subproblem counts are independent of that. Each non-passing
/// final outcome adds one error-histogram entry, and each semantic failure
/// with a numeric deviation adds one precision-bin entry at its worst
/// deviation.
pub fn aggregate(metadata: RunMetadata, results: &[ProblemResult]) -> Result<EvaluationReport, EvalError> {
    let mut report = EvaluationReport::empty(metadata);
    let mut per_domain: BTreeMap<Domain, DomainCounts> = BTreeMap::new();

    for result in results {
        if result.run_id != report.metadata.run_id {
            return Err(EvalError::MixedRun {
                problem_id: result.problem_id.clone(),
                expected: report.metadata.run_id.clone(),
                found: result.run_id.clone(),
            });
        }
        let counts = per_domain.entry(result.domain).or_default();
        let passed = result.sub_results.iter().filter(|s| s.passed()).count();
        counts.main_total += 1;
        counts.sub_total += result.sub_results.len();
        counts.sub_solved += passed;
        if !result.sub_results.is_empty() && passed == result.sub_results.len() {
            counts.main_solved += 1;
        }

        for sub in result.sub_results.iter().filter(|s| !s.passed()) {
            let outcome = &sub.final_outcome;
            let class = outcome.effective_error_class().unwrap_or(ErrorClass::Other);
            *report.error_histogram.entry(class).or_default() += 1;
            if outcome.is_semantic() {
                if let Some(d) = outcome.max_deviation() {
                    let bin = bin_deviation(d).map_err(|source| EvalError::Deviation {
                        problem_id: result.problem_id.clone(),
                        step_index: sub.step_index,
                        source,
                    })?;
                    *report.precision_histogram.entry(bin).or_default() += 1;
                }
            }
        }
    }

    for row in &mut report.domains {
        if let Some(c) = per_domain.get(&row.domain) {
            row.counts = *c;
        }
    }
    if let Some(c) = per_domain.get(&Domain::Unspecified) {
        report.domains.push(DomainRow { domain: Domain::Unspecified, counts: *c });
    }
    for row in &report.domains {
        report.total.add(&row.counts);
    }
    Ok(report)
}
