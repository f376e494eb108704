//! Lightweight static checks on generated Python source: identifier rules,
//! fenced-code extraction, and top-level `def` discovery.

use crate::model::FunctionSignature;

const PY_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

/// True if `s` is a non-keyword Python identifier.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first == '_' || first.is_alphabetic())
        && chars.all(|c| c == '_' || c.is_alphanumeric())
        && !PY_KEYWORDS.contains(&s)
}

/// Returns the body of the first fenced code block, or the whole trimmed
/// content when there is no fence. An unterminated fence runs to the end.
pub fn extract_code_block(content: &str) -> String {
    let mut lines = content.lines();
    let mut found = false;
    for line in lines.by_ref() {
        if line.trim_start().starts_with("```") {
            found = true;
            break;
        }
    }
    if !found {
        return content.trim().to_string();
    }
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            break;
        }
        body.push(line);
    }
    body.join("\n")
}

/// A module-level function definition found in source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
}

impl FunctionDef {
    /// Number of named parameters. Bare `*` and `/` markers are not counted.
    pub fn arity(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.as_str() != "*" && p.as_str() != "/")
            .count()
    }
}

/// True iff `code` defines, at module level, a function with the expected
/// name and parameter count. Unbalanced brackets or quotes yield false.
pub fn validate_generated_signature(code: &str, expected: &FunctionSignature) -> bool {
    match top_level_defs(code) {
        Some(defs) => defs
            .iter()
            .any(|d| d.name == expected.name && d.arity() == expected.arity()),
        None => false,
    }
}

/// Scans for module-level `def` / `async def` statements. Returns `None`
/// when the source is not lexically balanced.
pub fn top_level_defs(code: &str) -> Option<Vec<FunctionDef>> {
    let mut scanner = Scanner::new(code);
    let mut defs = Vec::new();
    while let Some(start) = scanner.next_line_start() {
        let rest = &code[start..];
        let after_kw = rest
            .strip_prefix("def ")
            .or_else(|| rest.strip_prefix("async ").map(str::trim_start).and_then(|r| r.strip_prefix("def ")));
        if let Some(after) = after_kw {
            let after = after.trim_start();
            let name: String = after
                .chars()
                .take_while(|c| *c == '_' || c.is_alphanumeric())
                .collect();
            let tail = after[name.len()..].trim_start();
            if is_identifier(&name) && tail.starts_with('(') {
                let open = code.len() - tail.len();
                let (params, end) = scanner.read_params(open)?;
                defs.push(FunctionDef { name, params });
                scanner.pos = end;
                continue;
            }
        }
        scanner.skip_logical_line()?;
    }
    Some(defs)
}

/// Byte scanner that understands Python string literals and comments well
/// enough to balance brackets.
struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner { src, pos: 0 }
    }

    fn bytes(&self) -> &'a [u8] {
        self.src.as_bytes()
    }

    /// Advances to the next line that starts at column 0 with non-blank
    /// content, returning its offset.
    fn next_line_start(&mut self) -> Option<usize> {
        let b = self.bytes();
        while self.pos < b.len() {
            let at_line_start = self.pos == 0 || b[self.pos - 1] == b'\n';
            if at_line_start && !matches!(b[self.pos], b' ' | b'\t' | b'\n' | b'\r' | b'#') {
                return Some(self.pos);
            }
            if at_line_start {
                self.skip_logical_line()?;
            } else {
                self.pos += 1;
            }
        }
        None
    }

    /// Skips to the start of the next physical line outside any bracket or
    /// string. Returns `None` on unbalanced input.
    fn skip_logical_line(&mut self) -> Option<()> {
        let mut depth = 0usize;
        let b = self.bytes();
        while self.pos < b.len() {
            match b[self.pos] {
                b'#' => self.skip_comment(),
                b'\'' | b'"' => self.skip_string()?,
                b'(' | b'[' | b'{' => {
                    depth += 1;
                    self.pos += 1;
                }
                b')' | b']' | b'}' => {
                    depth = depth.checked_sub(1)?;
                    self.pos += 1;
                }
                b'\\' => self.pos += 2,
                b'\n' => {
                    self.pos += 1;
                    if depth == 0 {
                        return Some(());
                    }
                }
                _ => self.pos += 1,
            }
        }
        if depth == 0 {
            Some(())
        } else {
            None
        }
    }

    fn skip_comment(&mut self) {
        let b = self.bytes();
        while self.pos < b.len() && b[self.pos] != b'\n' {
            self.pos += 1;
        }
    }

    fn skip_string(&mut self) -> Option<()> {
        let b = self.bytes();
        let quote = b[self.pos];
        let triple = b.len() >= self.pos + 3 && b[self.pos + 1] == quote && b[self.pos + 2] == quote;
        self.pos += if triple { 3 } else { 1 };
        while self.pos < b.len() {
            match b[self.pos] {
                b'\\' => self.pos += 2,
                c if c == quote => {
                    if !triple {
                        self.pos += 1;
                        return Some(());
                    }
                    if b.len() >= self.pos + 3 && b[self.pos + 1] == quote && b[self.pos + 2] == quote {
                        self.pos += 3;
                        return Some(());
                    }
                    self.pos += 1;
                }
                b'\n' if !triple => return None,
                _ => self.pos += 1,
            }
        }
        None
    }

    /// Reads a parenthesised parameter list starting at `open` and splits it
    /// on depth-zero commas. Returns the params and the offset after `)`.
    fn read_params(&mut self, open: usize) -> Option<(Vec<String>, usize)> {
        self.pos = open + 1;
        let b = self.bytes();
        let mut depth = 0usize;
        let mut seg_start = self.pos;
        let mut params = Vec::new();
        let push = |seg: &str, params: &mut Vec<String>| {
            let name = param_name(seg);
            if !name.is_empty() {
                params.push(name);
            }
        };
        while self.pos < b.len() {
            match b[self.pos] {
                b'#' => self.skip_comment(),
                b'\'' | b'"' => self.skip_string()?,
                b'(' | b'[' | b'{' => {
                    depth += 1;
                    self.pos += 1;
                }
                b')' if depth == 0 => {
                    push(&self.src[seg_start..self.pos], &mut params);
                    self.pos += 1;
                    // rest of the header, e.g. `-> float:`
                    self.skip_logical_line()?;
                    return Some((params, self.pos));
                }
                b')' | b']' | b'}' => {
                    depth = depth.checked_sub(1)?;
                    self.pos += 1;
                }
                b',' if depth == 0 => {
                    push(&self.src[seg_start..self.pos], &mut params);
                    self.pos += 1;
                    seg_start = self.pos;
                }
                _ => self.pos += 1,
            }
        }
        None
    }
}

/// Normalises one parameter segment (`x: int = 3`, `*args`) to its name,
/// keeping `*`/`**` prefixes and bare markers.
fn param_name(segment: &str) -> String {
    let seg: String = segment
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join(" ");
    let seg = seg.trim();
    let end = seg.find([':', '=']).unwrap_or(seg.len());
    seg[..end].trim().to_string()
}
