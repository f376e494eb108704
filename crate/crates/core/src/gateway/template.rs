//! Prompt templates loaded from plain-text files.
//!
//! Format, one file per template (`<name>.tmpl`):
//!
//! * `{NAME}` placeholders, where NAME is uppercase letters, digits and `_`
//!   starting with a letter. Every placeholder must be bound. Other braces
//!   are literal text. Bound values are inserted verbatim and never rescanned.
//! * `@@ system`, `@@ user` and `@@ assistant` lines start a new message with
//!   that role. Text before the first marker belongs to a user message.
//! * A line starting with `!UPPER ` has the prefix removed and its literal
//!   text uppercased; substituted values keep their case.
//! * Lines starting with `@@#` are comments.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use super::request::{Message, Role};
use super::GatewayError;

pub const TEMPLATE_EXTENSION: &str = "tmpl";
const UPPER_PREFIX: &str = "!UPPER ";

#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    dir: Option<PathBuf>,
    templates: BTreeMap<String, String>,
}

impl TemplateStore {
    /// Loads every `*.tmpl` file in `dir`, keyed by file stem.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        let io = |e: std::io::Error| GatewayError::Template(format!("{}: {e}", dir.display()));
        let mut templates = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(TEMPLATE_EXTENSION) {
                continue;
            }
            let Some(name) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| GatewayError::Template(format!("{}: {e}", path.display())))?;
            templates.insert(name.to_string(), text);
        }
        Ok(TemplateStore { dir: Some(dir.to_path_buf()), templates })
    }

    pub fn from_map<I, K, V>(templates: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        TemplateStore {
            dir: None,
            templates: templates.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.templates.contains_key(name)
    }

    pub fn render(&self, name: &str, bindings: &HashMap<&str, String>) -> Result<Vec<Message>, GatewayError> {
        let text = self
            .templates
            .get(name)
            .ok_or_else(|| GatewayError::UnknownTemplate(name.to_string()))?;
        render_text(text, bindings)
    }
}

/// Renders template text with the given bindings.
pub fn render_text(text: &str, bindings: &HashMap<&str, String>) -> Result<Vec<Message>, GatewayError> {
    let mut messages: Vec<(Role, Vec<String>)> = Vec::new();
    for line in text.lines() {
        if line.starts_with("@@#") {
            continue;
        }
        if let Some(role) = role_marker(line) {
            messages.push((role, Vec::new()));
            continue;
        }
        let (body, upper) = match line.strip_prefix(UPPER_PREFIX) {
            Some(rest) => (rest, true),
            None => (line, false),
        };
        let rendered = substitute(body, bindings, upper)?;
        match messages.last_mut() {
            Some((_, lines)) => lines.push(rendered),
            None => messages.push((Role::User, vec![rendered])),
        }
    }
    Ok(messages
        .into_iter()
        .map(|(role, lines)| Message::new(role, trim_blank_lines(&lines)))
        .filter(|m| m.role != Role::User || !m.content.is_empty())
        .collect())
}

fn role_marker(line: &str) -> Option<Role> {
    let rest = line.strip_prefix("@@")?.trim();
    match rest {
        "system" => Some(Role::System),
        "user" => Some(Role::User),
        "assistant" => Some(Role::Assistant),
        _ => None,
    }
}

fn trim_blank_lines(lines: &[String]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

fn placeholder_at(s: &str) -> Option<&str> {
    let inner = s.strip_prefix('{')?;
    let end = inner.find('}')?;
    let name = &inner[..end];
    let mut chars = name.chars();
    let valid = chars.next().is_some_and(|c| c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
    valid.then_some(name)
}

fn substitute(line: &str, bindings: &HashMap<&str, String>, upper: bool) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(line.len());
    let mut literal = String::new();
    let flush = |literal: &mut String, out: &mut String| {
        if upper {
            out.push_str(&literal.to_uppercase());
        } else {
            out.push_str(literal);
        }
        literal.clear();
    };
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if c == '{' {
            if let Some(name) = placeholder_at(rest) {
                let value = bindings
                    .get(name)
                    .ok_or_else(|| GatewayError::UnboundPlaceholder(name.to_string()))?;
                flush(&mut literal, &mut out);
                out.push_str(value);
                rest = &rest[name.len() + 2..];
                continue;
            }
        }
        literal.push(c);
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut literal, &mut out);
    Ok(out)
}

/// Placeholder names referenced by a template, in first-use order.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for (i, _) in text.match_indices('{') {
        if let Some(name) = placeholder_at(&text[i..]) {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
    }
    names
}
