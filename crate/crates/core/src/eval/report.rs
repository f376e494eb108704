use std::fmt::Write;

use super::aggregate::{DomainCounts, EvaluationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Fixed-width text with one row per domain.
    Table,
    /// Pretty-printed JSON of the full report.
    Structured,
}

/// Renders a report. Output depends only on the report contents.
pub fn render_report(report: &EvaluationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => render_table(report),
    }
}

fn ratio(solved: usize, total: usize) -> String {
    format!("{solved}/{total}")
}

fn solve_row(out: &mut String, label: &str, c: &DomainCounts) {
    let _ = writeln!(
        out,
        "{:<18}  {:>8}  {:>9}",
        label,
        ratio(c.main_solved, c.main_total),
        ratio(c.sub_solved, c.sub_total)
    );
}

fn render_table(report: &EvaluationReport) -> String {
    let m = &report.metadata;
    let mut out = String::new();
    let _ = writeln!(out, "run {}", m.run_id);
    let _ = writeln!(
        out,
        "backend {}  model {}  k {}  mode {}",
        m.backend, m.model, m.k_debug_rounds, m.mode
    );
    if let Some(ts) = &m.timestamp {
        let _ = writeln!(out, "started {ts}");
    }
    out.push('\n');

    let _ = writeln!(out, "{:<18}  {:>8}  {:>9}", "Domain", "Main", "Sub");
    let _ = writeln!(out, "{:-<18}  {:->8}  {:->9}", "", "", "");
    solve_row(&mut out, "Total", &report.total);
    for row in &report.domains {
        solve_row(&mut out, row.domain.display_name(), &row.counts);
    }

    out.push('\n');
    let _ = writeln!(out, "{:<14}  {:<9}  {:>5}", "Error class", "Kind", "Count");
    let _ = writeln!(out, "{:-<14}  {:-<9}  {:->5}", "", "", "");
    for (class, count) in &report.error_histogram {
        let label = if class.is_extension() {
            format!("{class}*")
        } else {
            class.to_string()
        };
        let kind = if class.is_syntactic() { "syntactic" } else { "semantic" };
        let _ = writeln!(out, "{label:<14}  {kind:<9}  {count:>5}");
    }
    let _ = writeln!(
        out,
        "{:<14}  {:<9}  {:>5}",
        "(syntactic)", "", report.syntactic_errors()
    );
    let _ = writeln!(out, "{:<14}  {:<9}  {:>5}", "(semantic)", "", report.semantic_errors());
    out.push_str("* not one of the benchmark's named exception classes; counted as syntactic\n");

    out.push('\n');
    let _ = writeln!(out, "{:<14}  {:>5}", "Deviation", "Count");
    let _ = writeln!(out, "{:-<14}  {:->5}", "", "");
    for (bin, count) in &report.precision_histogram {
        let _ = writeln!(out, "{:<14}  {count:>5}", bin.label());
    }
    out
}
