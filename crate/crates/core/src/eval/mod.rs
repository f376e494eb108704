//! Scoring: solve counts under the all-subproblems-must-pass protocol, error
//! class histograms, and precision bins for numeric mismatches.

mod aggregate;
mod precision;
mod report;
mod taxonomy;

pub use aggregate::{aggregate, DomainCounts, DomainRow, EvalError, EvaluationReport, RunMetadata};
pub use precision::{bin_deviation, DomainError, PrecisionBin, EDGES};
pub use report::{render_report, ReportFormat};
pub use taxonomy::{extract_error_class, ErrorClass};
