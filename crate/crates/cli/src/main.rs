use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mosaic_cli::{report, solve, teach, ConfigLayer, Env, Purpose, RunConfig};
use mosaic_core::sandbox::{serve, SandboxScript};
use mosaic_core::{Mode, Split};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "mosaic", version, about = "Multi-agent chained scientific code generation")]
struct Cli {
    /// Log debug detail to stderr (RUST_LOG overrides).
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build per-domain memory from validation ground truth.
    Teach(RunArgs),
    /// Solve test problems and write a run directory.
    Solve(RunArgs),
    /// Re-aggregate an existing run directory.
    Report(RunArgs),
    /// Serve the worker protocol from a script of canned outcomes.
    #[command(hide = true)]
    StubWorker {
        #[arg(long)]
        script: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// live, record or replay.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    replay_store: Option<PathBuf>,
    #[arg(long)]
    k_debug_rounds: Option<u32>,
    /// Per-execution sandbox timeout in seconds.
    #[arg(long)]
    timeout_s: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Restrict to these problem ids (repeatable).
    #[arg(long = "problem")]
    problems: Vec<String>,
    /// Parent directory of run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "live" => Ok(Mode::Live),
        "record" => Ok(Mode::Record),
        "replay" => Ok(Mode::Replay),
        other => Err(format!("unknown mode {other:?}; expected live, record or replay")),
    }
}

impl RunArgs {
    fn resolve(self, purpose: Purpose) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => ConfigLayer::from_file(path)?,
            None => ConfigLayer::default(),
        };
        let flags = ConfigLayer {
            dataset: self.dataset,
            split: self.split,
            ground_truth: self.ground_truth,
            memory: self.memory,
            templates: self.templates,
            backend: self.backend,
            model: self.model,
            mode: self.mode,
            replay_store: self.replay_store,
            k_debug_rounds: self.k_debug_rounds,
            timeout_s: self.timeout_s,
            workers: self.workers,
            problems: (!self.problems.is_empty()).then_some(self.problems),
            out: self.out,
            run_id: self.run_id,
            ..ConfigLayer::default()
        };
        RunConfig::resolve(file.overlay(flags), purpose)
    }
}

fn env(stdout: &mut io::Stdout) -> Env<'_> {
    Env { stdout, provider: None, self_exe: None }
}

fn run(cli: Cli) -> Result<i32> {
    let mut stdout = io::stdout();
    let exit = match cli.command {
        Cmd::Teach(args) => teach(&args.resolve(Purpose::Teach)?, env(&mut stdout))?,
        Cmd::Solve(args) => solve(&args.resolve(Purpose::Solve)?, env(&mut stdout))?,
        Cmd::Report(args) => report(&args.resolve(Purpose::Report)?, env(&mut stdout))?,
        Cmd::StubWorker { script } => {
            let script = SandboxScript::load(&script)?;
            serve(&script, io::stdin().lock(), io::stdout().lock()).context("serving worker protocol")?;
            return Ok(0);
        }
    };
    Ok(exit.code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = if cli.verbose { "debug" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
