//! Consolidated context window: the only record of earlier steps that the
//! agents see. It holds each accepted step's signature and a one-sentence
//! summary, never code bodies.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_SUMMARY_CHARS: usize = 200;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CcwError {
    #[error("step {step_index} added after step {last}")]
    OutOfOrder { step_index: u32, last: u32 },
    #[error("summary for step {step_index} is {len} chars (limit {max})")]
    SummaryTooLong { step_index: u32, len: usize, max: usize },
    #[error("summary for step {step_index} contains a newline")]
    MultilineSummary { step_index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcwEntry {
    pub step_index: u32,
    pub signature_raw: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    entries: Vec<CcwEntry>,
    max_summary_chars: usize,
}

impl ContextWindow {
    pub fn new(max_summary_chars: usize) -> Self {
        ContextWindow { entries: Vec::new(), max_summary_chars }
    }

    pub fn entries(&self) -> &[CcwEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_summary_chars(&self) -> usize {
        self.max_summary_chars
    }

    pub fn push(&mut self, entry: CcwEntry) -> Result<(), CcwError> {
        if let Some(last) = self.entries.last() {
            if entry.step_index <= last.step_index {
                return Err(CcwError::OutOfOrder { step_index: entry.step_index, last: last.step_index });
            }
        }
        let len = entry.summary.chars().count();
        if len > self.max_summary_chars {
            return Err(CcwError::SummaryTooLong {
                step_index: entry.step_index,
                len,
                max: self.max_summary_chars,
            });
        }
        if entry.summary.contains(['\n', '\r']) {
            return Err(CcwError::MultilineSummary { step_index: entry.step_index });
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Text form bound into prompts. Empty when no step has been accepted.
    ///
    /// ```text
    /// Step 1 signature:
    /// def f(x):
    /// Step 1 summary: Computes the grid spacing.
    /// ```
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "Step {} signature:", e.step_index);
            let _ = writeln!(out, "{}", e.signature_raw.trim_end());
            let _ = writeln!(out, "Step {} summary: {}", e.step_index, e.summary);
        }
        out
    }
}

/// Reduces free text to one sentence of at most `max_chars` characters on
/// a single line. Cuts at a word boundary when possible.
pub fn sanitize_summary(text: &str, max_chars: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let sentence = first_sentence(&flat);
    truncate_at_word(sentence, max_chars)
}

fn first_sentence(text: &str) -> &str {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1) == Some(&b' ') {
            return &text[..=i];
        }
    }
    text
}

fn truncate_at_word(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let cut = text
        .char_indices()
        .nth(max_chars)
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let head = &text[..cut];
    // the next char being a space means `head` already ends on a word
    let next_is_space = text[cut..].starts_with(' ');
    let trimmed = if next_is_space {
        head
    } else {
        match head.rfind(' ') {
            Some(space) if space > 0 => &head[..space],
            _ => head,
        }
    };
    trimmed.trim_end().to_string()
}
