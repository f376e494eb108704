//! Run configuration: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use mosaic_core::{Mode, PipelineConfig, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Every setting optional, as read from a file or collected from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub dataset: Option<PathBuf>,
    pub split: Option<Split>,
    pub ground_truth: Option<PathBuf>,
    pub memory: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub mode: Option<Mode>,
    pub replay_store: Option<PathBuf>,
    pub token_limit: Option<u64>,
    pub http_timeout_s: Option<f64>,
    pub k_debug_rounds: Option<u32>,
    pub exemplar_limit: Option<usize>,
    pub max_summary_chars: Option<usize>,
    pub timeout_s: Option<f64>,
    pub expose_sample_tests: Option<bool>,
    pub workers: Option<usize>,
    pub problems: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
    pub sandbox: Option<SandboxLayer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxLayer {
    pub kind: Option<SandboxKind>,
    pub script: Option<PathBuf>,
    pub command: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SandboxKind {
    /// In-process stand-in answering from a script of canned outcomes.
    Stub,
    /// External worker speaking the line protocol on stdin/stdout.
    Process,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl ConfigLayer {
    /// Reads a TOML file. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<ConfigLayer> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut layer: ConfigLayer =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        layer.rebase(base);
        Ok(layer)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.ground_truth);
        fix(&mut self.memory);
        fix(&mut self.templates);
        fix(&mut self.replay_store);
        fix(&mut self.out);
        if let Some(sandbox) = &mut self.sandbox {
            fix(&mut sandbox.script);
        }
    }

    /// `top` wins wherever it sets a value.
    pub fn overlay(mut self, top: ConfigLayer) -> ConfigLayer {
        overlay!(self, top;
            dataset, split, ground_truth, memory, templates, backend, model, temperature, max_tokens,
            mode, replay_store, token_limit, http_timeout_s, k_debug_rounds, exemplar_limit,
            max_summary_chars, timeout_s, expose_sample_tests, workers, problems, out, run_id);
        if let Some(top_sandbox) = top.sandbox {
            let mut sandbox = self.sandbox.take().unwrap_or_default();
            overlay!(sandbox, top_sandbox; kind, script, command);
            self.sandbox = Some(sandbox);
        }
        self
    }
}

/// Which command the configuration is resolved for. Only the default split
/// depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Teach,
    Solve,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub kind: SandboxKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    pub command: Vec<String>,
}

/// Fully resolved settings. Written into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub split: Split,
    pub ground_truth: Option<PathBuf>,
    pub memory: PathBuf,
    pub templates: PathBuf,
    pub backend: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub mode: Mode,
    pub replay_store: PathBuf,
    pub token_limit: Option<u64>,
    pub http_timeout_s: f64,
    pub k_debug_rounds: u32,
    pub exemplar_limit: usize,
    pub max_summary_chars: usize,
    pub timeout_s: f64,
    pub expose_sample_tests: bool,
    pub workers: usize,
    pub problems: Vec<String>,
    pub out: PathBuf,
    pub run_id: String,
    pub sandbox: SandboxConfig,
}

impl RunConfig {
    pub fn resolve(layer: ConfigLayer, purpose: Purpose) -> Result<RunConfig> {
        let pipeline = PipelineConfig::default();
        let sandbox = layer.sandbox.unwrap_or_default();
        let mut config = RunConfig {
            dataset: layer.dataset,
            split: layer.split.unwrap_or(match purpose {
                Purpose::Teach => Split::Validation,
                Purpose::Solve | Purpose::Report => Split::Test,
            }),
            ground_truth: layer.ground_truth,
            memory: layer.memory.unwrap_or_else(|| "memory".into()),
            templates: layer.templates.unwrap_or_else(|| "templates".into()),
            backend: layer.backend.unwrap_or_else(|| "openai".into()),
            model: layer.model.unwrap_or_else(|| "gpt-4o".into()),
            temperature: layer.temperature.unwrap_or(0.0),
            max_tokens: layer.max_tokens.unwrap_or(4096),
            mode: layer.mode.unwrap_or(Mode::Replay),
            replay_store: layer.replay_store.unwrap_or_else(|| "replay/store.jsonl".into()),
            token_limit: layer.token_limit,
            http_timeout_s: layer.http_timeout_s.unwrap_or(120.0),
            k_debug_rounds: layer.k_debug_rounds.unwrap_or(pipeline.k_debug_rounds),
            exemplar_limit: layer.exemplar_limit.unwrap_or(pipeline.exemplar_limit),
            max_summary_chars: layer.max_summary_chars.unwrap_or(pipeline.max_summary_chars),
            timeout_s: layer.timeout_s.unwrap_or(pipeline.sandbox_timeout.as_secs_f64()),
            expose_sample_tests: layer.expose_sample_tests.unwrap_or(false),
            workers: layer.workers.unwrap_or(1),
            problems: layer.problems.unwrap_or_default(),
            out: layer.out.unwrap_or_else(|| "runs".into()),
            run_id: String::new(),
            sandbox: SandboxConfig {
                kind: sandbox.kind.unwrap_or(SandboxKind::Process),
                script: sandbox.script,
                command: sandbox.command.unwrap_or_default(),
            },
        };
        config.validate()?;
        config.absolutize()?;
        config.run_id = match layer.run_id {
            Some(id) => id,
            None => config.derived_run_id(),
        };
        if config.run_id.is_empty() || config.run_id.contains(['/', '\\']) || config.run_id.starts_with('.') {
            bail!("run_id {:?} is not usable as a directory name", config.run_id);
        }
        Ok(config)
    }

    /// Makes every path absolute so the saved config can be reused from any
    /// directory.
    fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        };
        for p in [&mut self.memory, &mut self.templates, &mut self.replay_store, &mut self.out] {
            abs(p)?;
        }
        for p in [&mut self.dataset, &mut self.ground_truth, &mut self.sandbox.script].into_iter().flatten() {
            abs(p)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            bail!("timeout_s must be a positive number of seconds, got {}", self.timeout_s);
        }
        if !(self.http_timeout_s.is_finite() && self.http_timeout_s > 0.0) {
            bail!("http_timeout_s must be positive, got {}", self.http_timeout_s);
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            bail!("temperature must lie in [0, 2], got {}", self.temperature);
        }
        if self.max_tokens == 0 || self.max_summary_chars == 0 || self.workers == 0 {
            bail!("max_tokens, max_summary_chars and workers must be positive");
        }
        Ok(())
    }

    /// `run-` plus a short hash of every other setting, so identical
    /// configurations share a run directory.
    fn derived_run_id(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        format!("run-{}", &hex::encode(Sha256::digest(text.as_bytes()))[..12])
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .context("missing dataset path: pass --dataset or set `dataset` in the config file")
    }

    pub fn ground_truth(&self) -> Result<&Path> {
        self.ground_truth
            .as_deref()
            .context("missing ground-truth path: pass --ground-truth or set `ground_truth` in the config file")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_id)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            k_debug_rounds: self.k_debug_rounds,
            exemplar_limit: self.exemplar_limit,
            max_summary_chars: self.max_summary_chars,
            sandbox_timeout: Duration::from_secs_f64(self.timeout_s),
            mode: self.mode,
            expose_sample_tests: self.expose_sample_tests,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
