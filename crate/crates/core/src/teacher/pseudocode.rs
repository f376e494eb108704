/// Pseudocode parsed from a reflection reply: an optional lead-in summary
/// followed by `STEP k:` items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPseudocode {
    pub summary: String,
    pub steps: Vec<String>,
}

/// Parses `STEP k:` lines leniently: case-insensitive, tolerant of list
/// bullets, markdown emphasis and `.`/`)` in place of the colon. Lines that
/// follow a step and are not themselves a step are appended to it.
pub fn parse_pseudocode(text: &str) -> ParsedPseudocode {
    let mut summary_lines = Vec::new();
    let mut steps: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        if let Some(body) = step_body(line) {
            steps.push(body.to_string());
        } else if let Some(current) = steps.last_mut() {
            if !line.trim().is_empty() {
                current.push('\n');
                current.push_str(line.trim_end());
            }
        } else {
            summary_lines.push(line.trim());
        }
    }
    let summary = summary_lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| l.trim_start_matches(['#', '*', ' ']).trim_end_matches('*'))
        .map(|l| strip_label(l, "summary"))
        .collect::<Vec<_>>()
        .join(" ");
    ParsedPseudocode { summary: summary.trim().to_string(), steps }
}

fn strip_label<'a>(line: &'a str, label: &str) -> &'a str {
    if line.len() > label.len() && line[..label.len()].eq_ignore_ascii_case(label) {
        if let Some(rest) = line[label.len()..].trim_start().strip_prefix(':') {
            return rest.trim_start();
        }
    }
    line
}

fn step_body(line: &str) -> Option<&str> {
    let s = line.trim_start().trim_start_matches(['-', '*', '#', '>', ' ']);
    if s.len() < 4 || !s[..4].eq_ignore_ascii_case("step") {
        return None;
    }
    let rest = s[4..].trim_start();
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = rest[digits..].trim_start_matches('*').trim_start();
    let rest = rest.strip_prefix([':', '.', ')'])?;
    Some(rest.trim_start_matches('*').trim())
}

/// Names from `names` that never appear as a whole word in the steps.
pub fn missing_names<'a>(steps: &[String], names: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let text = steps.join("\n");
    names
        .into_iter()
        .filter(|name| !contains_word(&text, name))
        .collect()
}

fn contains_word(text: &str, word: &str) -> bool {
    let is_word = |c: char| c == '_' || c.is_alphanumeric();
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(is_word) && !after.is_some_and(is_word)
    })
}
