//! Dataset types: main problems, their chained subproblems, and the JSON Lines
//! schema they are loaded from.
//!
//! A dataset file holds one [`MainProblem`] per line:
//!
//! ```text
//! {"problem_id":"p1","domain":"physics","title":"...","description":"...",
//!  "allowed_dependencies":["numpy"],
//!  "subproblems":[{"step_index":1,"prompt":"...","background":"",
//!    "signature":{"name":"f","params":[{"name":"x","description":"..."}],
//!                 "returns":"...","raw":"def f(x):"},
//!    "tests":[{"call_expression":"f(3)","target":6,"rel_tol":1e-8,"abs_tol":1e-8}]}]}
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Targets are finite
//! numbers, strings, nested lists of those, or complex numbers written as
//! `{"complex": true, "value": [re, im]}`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::signature::is_identifier;

/// Default tolerances applied when a test record omits them.
pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const DEFAULT_ABS_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("duplicate problem id {0:?}")]
    DuplicateId(String),
    #[error("problem {0:?} appears in both the validation and test splits")]
    SplitOverlap(String),
}

impl ModelError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// Scientific domain used to bucket problems and their exemplar memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Physics,
    Chemistry,
    Biology,
    MaterialScience,
    Mathematics,
    Unspecified,
}

impl Domain {
    /// The five benchmark domains, in reporting order.
    pub const BENCHMARK: [Domain; 5] = [
        Domain::Physics,
        Domain::Chemistry,
        Domain::Biology,
        Domain::MaterialScience,
        Domain::Mathematics,
    ];

    pub const ALL: [Domain; 6] = [
        Domain::Physics,
        Domain::Chemistry,
        Domain::Biology,
        Domain::MaterialScience,
        Domain::Mathematics,
        Domain::Unspecified,
    ];

    /// Parses a free-form label. Case, spaces, hyphens and underscores are
    /// ignored. Returns `None` for labels outside the known set.
    pub fn parse_label(label: &str) -> Option<Domain> {
        let key: String = label
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "physics" => Some(Domain::Physics),
            "chemistry" => Some(Domain::Chemistry),
            "biology" => Some(Domain::Biology),
            "materialscience" | "materialsscience" => Some(Domain::MaterialScience),
            "mathematics" | "math" | "maths" => Some(Domain::Mathematics),
            "unspecified" => Some(Domain::Unspecified),
            _ => None,
        }
    }

    /// Lenient parse: unknown labels become `Unspecified`.
    pub fn from_label(label: &str) -> Domain {
        Domain::parse_label(label).unwrap_or(Domain::Unspecified)
    }

    /// Stable lowercase identifier used in file names and serialized data.
    pub fn slug(self) -> &'static str {
        match self {
            Domain::Physics => "physics",
            Domain::Chemistry => "chemistry",
            Domain::Biology => "biology",
            Domain::MaterialScience => "material_science",
            Domain::Mathematics => "mathematics",
            Domain::Unspecified => "unspecified",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Domain::Physics => "Physics",
            Domain::Chemistry => "Chemistry",
            Domain::Biology => "Biology",
            Domain::MaterialScience => "Material Science",
            Domain::Mathematics => "Mathematics",
            Domain::Unspecified => "Unspecified",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Domain {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Domain::from_label(s))
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.slug())
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = String::deserialize(deserializer)?;
        Ok(Domain::from_label(&label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected validation or test)")),
        }
    }
}

/// Expected output of a test call.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Number(f64),
    Complex { re: f64, im: f64 },
    Text(String),
    List(Vec<Target>),
}

impl Target {
    pub fn is_numeric(&self) -> bool {
        match self {
            Target::Number(_) | Target::Complex { .. } => true,
            Target::Text(_) => false,
            Target::List(items) => !items.is_empty() && items.iter().all(Target::is_numeric),
        }
    }

    fn from_json(value: &serde_json::Value) -> Result<Target, String> {
        use serde_json::Value;
        match value {
            Value::Number(n) => {
                let x = n.as_f64().ok_or("number out of range")?;
                if x.is_finite() {
                    Ok(Target::Number(x))
                } else {
                    Err("non-finite number".into())
                }
            }
            Value::String(s) => Ok(Target::Text(s.clone())),
            Value::Array(items) => items
                .iter()
                .map(Target::from_json)
                .collect::<Result<Vec<_>, _>>()
                .map(Target::List),
            Value::Object(map) => {
                if map.get("complex") != Some(&Value::Bool(true)) {
                    return Err("objects are only allowed as tagged complex numbers".into());
                }
                let pair = map
                    .get("value")
                    .and_then(Value::as_array)
                    .filter(|p| p.len() == 2)
                    .ok_or("complex target needs \"value\": [re, im]")?;
                let re = pair[0].as_f64().ok_or("complex re is not a number")?;
                let im = pair[1].as_f64().ok_or("complex im is not a number")?;
                if !(re.is_finite() && im.is_finite()) {
                    return Err("non-finite complex component".into());
                }
                if map.len() != 2 {
                    return Err("complex target has unexpected keys".into());
                }
                Ok(Target::Complex { re, im })
            }
            Value::Bool(_) | Value::Null => Err("booleans and null are not valid targets".into()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::{json, Value};
        match self {
            Target::Number(x) => json!(x),
            Target::Complex { re, im } => json!({"complex": true, "value": [re, im]}),
            Target::Text(s) => Value::String(s.clone()),
            Target::List(items) => Value::Array(items.iter().map(Target::to_json).collect()),
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        Target::from_json(&value).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub call_expression: String,
    pub target: Target,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
}

fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}

fn default_abs_tol() -> f64 {
    DEFAULT_ABS_TOL
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSignature {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Param>,
    #[serde(default)]
    pub returns: String,
    /// Verbatim signature text as given by the dataset, e.g. `def f(x, y):`.
    pub raw: String,
}

impl FunctionSignature {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubProblem {
    pub step_index: u32,
    pub prompt: String,
    #[serde(default)]
    pub background: String,
    pub signature: FunctionSignature,
    #[serde(default)]
    pub tests: Vec<TestCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainProblem {
    pub problem_id: String,
    pub domain: Domain,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub allowed_dependencies: Vec<String>,
    pub subproblems: Vec<SubProblem>,
}

impl MainProblem {
    pub fn subproblem(&self, step_index: u32) -> Option<&SubProblem> {
        self.subproblems.iter().find(|s| s.step_index == step_index)
    }

    fn validate(&self, path: &str) -> Result<(), ModelError> {
        if self.problem_id.trim().is_empty() {
            return Err(ModelError::schema(format!("{path}.problem_id"), "must not be empty"));
        }
        if self.subproblems.is_empty() {
            return Err(ModelError::schema(format!("{path}.subproblems"), "must not be empty"));
        }
        for (i, sub) in self.subproblems.iter().enumerate() {
            let sub_path = format!("{path}.subproblems[{i}]");
            let expected = i as u32 + 1;
            if sub.step_index != expected {
                return Err(ModelError::schema(
                    format!("{sub_path}.step_index"),
                    format!("expected {expected}, found {} (indices must be 1..n in order)", sub.step_index),
                ));
            }
            if !is_identifier(&sub.signature.name) {
                return Err(ModelError::schema(
                    format!("{sub_path}.signature.name"),
                    format!("{:?} is not a valid identifier", sub.signature.name),
                ));
            }
            if sub.signature.raw.trim().is_empty() {
                return Err(ModelError::schema(format!("{sub_path}.signature.raw"), "must not be empty"));
            }
            for (j, test) in sub.tests.iter().enumerate() {
                let test_path = format!("{sub_path}.tests[{j}]");
                for (field, tol) in [("rel_tol", test.rel_tol), ("abs_tol", test.abs_tol)] {
                    if !tol.is_finite() || tol < 0.0 {
                        return Err(ModelError::schema(
                            format!("{test_path}.{field}"),
                            "must be finite and nonnegative",
                        ));
                    }
                }
                if test.call_expression.trim().is_empty() {
                    return Err(ModelError::schema(format!("{test_path}.call_expression"), "must not be empty"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSet {
    pub split: Split,
    pub problems: Vec<MainProblem>,
}

impl ProblemSet {
    pub fn get(&self, problem_id: &str) -> Option<&MainProblem> {
        self.problems.iter().find(|p| p.problem_id == problem_id)
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.problems.iter().map(|p| p.problem_id.as_str()).collect()
    }

    pub fn subproblem_count(&self) -> usize {
        self.problems.iter().map(|p| p.subproblems.len()).sum()
    }

    /// Serializes back to the JSON Lines dataset format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for problem in &self.problems {
            out.push_str(&serde_json::to_string(problem).expect("problem serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses and validates a JSON Lines dataset. Either the whole document is
/// accepted or an error is returned.
pub fn parse_problem_set(raw: &str, split: Split) -> Result<ProblemSet, ModelError> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let path = format!("line {}", lineno + 1);
        let problem: MainProblem = serde_json::from_str(line)
            .map_err(|e| ModelError::schema(path.clone(), e.to_string()))?;
        problem.validate(&path)?;
        if problem.domain == Domain::Unspecified {
            tracing::warn!(problem_id = %problem.problem_id, "problem has no recognised domain; using unspecified");
        }
        if !seen.insert(problem.problem_id.clone()) {
            return Err(ModelError::DuplicateId(problem.problem_id));
        }
        problems.push(problem);
    }
    Ok(ProblemSet { split, problems })
}

/// Fails if any problem id appears in both splits.
pub fn check_disjoint(validation: &ProblemSet, test: &ProblemSet) -> Result<(), ModelError> {
    let test_ids = test.ids();
    match validation
        .problems
        .iter()
        .find(|p| test_ids.contains(p.problem_id.as_str()))
    {
        Some(p) => Err(ModelError::SplitOverlap(p.problem_id.clone())),
        None => Ok(()),
    }
}
