use std::fmt;

use serde::{Deserialize, Serialize};

/// Failure category of an executed candidate.
///
/// `Syntax`, `Timeout` and `Other` extend the eight exception classes the
/// benchmark error analysis names. Every class except `Assertion` prevents
/// the code from executing to completion and so counts as syntactic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    Assertion,
    Value,
    Type,
    Name,
    Index,
    Attribute,
    Import,
    ZeroDivision,
    Syntax,
    Timeout,
    Other,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 11] = [
        ErrorClass::Assertion,
        ErrorClass::Value,
        ErrorClass::Type,
        ErrorClass::Name,
        ErrorClass::Index,
        ErrorClass::Attribute,
        ErrorClass::Import,
        ErrorClass::ZeroDivision,
        ErrorClass::Syntax,
        ErrorClass::Timeout,
        ErrorClass::Other,
    ];

    /// Classes beyond the benchmark's named exceptions.
    pub fn is_extension(self) -> bool {
        matches!(self, ErrorClass::Syntax | ErrorClass::Timeout | ErrorClass::Other)
    }

    pub fn is_syntactic(self) -> bool {
        self != ErrorClass::Assertion
    }

    /// Maps a Python exception class name, optionally module-qualified.
    pub fn from_exception_name(name: &str) -> ErrorClass {
        let short = name.rsplit('.').next().unwrap_or(name);
        match short {
            "AssertionError" => ErrorClass::Assertion,
            "ValueError" => ErrorClass::Value,
            "TypeError" => ErrorClass::Type,
            "NameError" | "UnboundLocalError" => ErrorClass::Name,
            "IndexError" => ErrorClass::Index,
            "AttributeError" => ErrorClass::Attribute,
            "ImportError" | "ModuleNotFoundError" => ErrorClass::Import,
            "ZeroDivisionError" => ErrorClass::ZeroDivision,
            "SyntaxError" | "IndentationError" | "TabError" => ErrorClass::Syntax,
            "TimeoutError" => ErrorClass::Timeout,
            _ => ErrorClass::Other,
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Classifies a Python traceback by the last exception raised in it.
///
/// The exception line is the last unindented line of the form `Name` or
/// `Name: message`; for chained tracebacks this is the final effect.
pub fn extract_error_class(traceback: &str) -> ErrorClass {
    traceback
        .lines()
        .rev()
        .find_map(exception_name)
        .map(ErrorClass::from_exception_name)
        .unwrap_or(ErrorClass::Other)
}

fn exception_name(line: &str) -> Option<&str> {
    let line = line.trim_end();
    if line.is_empty() || line.starts_with(char::is_whitespace) {
        return None;
    }
    let name_end = line
        .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
        .unwrap_or(line.len());
    let name = &line[..name_end];
    let rest = &line[name_end..];
    let looks_like_class = name
        .rsplit('.')
        .next()
        .is_some_and(|s| s.starts_with(|c: char| c.is_ascii_uppercase()));
    if looks_like_class && (rest.is_empty() || rest.starts_with(':')) {
        Some(name)
    } else {
        None
    }
}
