mod common;

use std::fs;
use std::path::Path;

use common::*;
use mosaic_cli::{teach, ConfigLayer, Env, Exit, Purpose, RunConfig};
use mosaic_core::{ChatRequest, ChatResponse, Mode};

fn config_arg() -> String {
    fixture_dir().join("mosaic.toml").to_string_lossy().into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn replay_solve_then_report() {
    let out = tempfile::tempdir().unwrap();
    let run = mosaic(&["solve", "--config", &config_arg(), "--out", p(out.path())]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("network calls: 0"));
    let dir = out.path().join("replay-demo");
    let table = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("Total") && l.contains("1/1") && l.contains("3/3")), "{table}");
    assert!(dir.join("transcripts/phys-projectile.jsonl").is_file());
    let run_json = fs::read_to_string(dir.join("run.json")).unwrap();
    assert!(!run_json.contains("timestamp"), "replay runs carry no wall-clock time");

    fs::remove_file(dir.join("report.txt")).unwrap();
    let rep = mosaic(&["report", "--config", &config_arg(), "--out", p(out.path())]);
    assert_eq!(rep.status.code(), Some(0), "{}", stderr(&rep));
    assert_eq!(fs::read_to_string(dir.join("report.txt")).unwrap(), table);
}

#[test]
fn flags_override_the_config_file() {
    let out = tempfile::tempdir().unwrap();
    let run = mosaic(&[
        "solve", "--config", &config_arg(), "--out", p(out.path()), "--k-debug-rounds", "0", "--run-id", "k0",
    ]);
    // with no repair the second step fails, so the third step's prompt has a
    // shorter window than anything recorded and replay aborts
    let saved = fs::read_to_string(out.path().join("k0/config.toml")).unwrap();
    let resolved: ConfigLayer = toml::from_str(&saved).unwrap();
    assert_eq!(resolved.k_debug_rounds, Some(0));
    assert_eq!(resolved.run_id.as_deref(), Some("k0"));
    assert_eq!(resolved.max_summary_chars, Some(200), "defaults fill the rest");
    assert!(resolved.dataset.unwrap().ends_with("fixtures/replay/test.jsonl"));
    assert_eq!(run.status.code(), Some(1), "missing recording aborts: {}", stdout(&run));
}

#[test]
fn unknown_problem_id_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let run = mosaic(&["solve", "--config", &config_arg(), "--out", p(out.path()), "--problem", "nope"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("unknown problem id"), "{}", stderr(&run));
}

#[test]
fn empty_replay_store_aborts_naming_the_agent() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty.jsonl");
    fs::write(&store, "").unwrap();
    let run = mosaic(&[
        "solve", "--config", &config_arg(), "--out", p(dir.path()), "--replay-store", p(&store),
    ]);
    assert_eq!(run.status.code(), Some(1));
    let text = stdout(&run);
    assert!(text.contains("aborted phys-projectile") && text.contains("Rationale"), "{text}");
    let table = fs::read_to_string(dir.path().join("replay-demo/report.txt")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("Total") && l.contains("0/1") && l.contains("0/3")));
}

#[test]
fn teach_without_ground_truth_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = mosaic(&[
        "teach",
        "--dataset",
        p(&fixture_dir().join("validation.jsonl")),
        "--memory",
        p(&dir.path().join("m")),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("--ground-truth"), "{}", stderr(&run));
}

#[test]
fn live_mode_without_credentials_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let run = mosaic(&["solve", "--config", &config_arg(), "--out", p(dir.path()), "--mode", "live", "--backend", "acme-test"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("MOSAIC_API_KEY_ACME_TEST"), "{}", stderr(&run));
}

#[test]
fn teach_with_failed_reflections_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let layer = ConfigLayer::from_file(&fixture_dir().join("mosaic.toml")).unwrap().overlay(ConfigLayer {
        dataset: Some(fixture_dir().join("validation.jsonl")),
        memory: Some(dir.path().join("memory")),
        mode: Some(Mode::Live),
        ..Default::default()
    });
    let config = RunConfig::resolve(layer, Purpose::Teach).unwrap();
    let provider = FnProvider::new(|_: &ChatRequest| ChatResponse::stop("no plan today"));
    let mut sink = Vec::new();
    let env = Env { stdout: &mut sink, provider: Some(provider), self_exe: None };
    assert_eq!(teach(&config, env).unwrap(), Exit::Partial);
    assert_eq!(Exit::Partial.code(), 2);
    assert!(String::from_utf8(sink).unwrap().contains("reflected: 0"));
}

#[test]
fn report_over_zero_problems() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "# no problems\n").unwrap();
    let run = mosaic(&["solve", "--config", &config_arg(), "--out", p(dir.path()), "--dataset", p(&empty)]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let rep = mosaic(&["report", "--config", &config_arg(), "--out", p(dir.path())]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(stdout(&rep).lines().any(|l| l.starts_with("Total") && l.contains("0/0")));
}

#[test]
fn process_sandbox_through_stub_worker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("process.toml");
    let f = fixture_dir();
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\nmemory = {:?}\ntemplates = {:?}\nreplay_store = {:?}\nrun_id = \"proc\"\n[sandbox]\nkind = \"process\"\ncommand = [{:?}, \"stub-worker\", \"--script\", {:?}]\n",
            f.join("test.jsonl"),
            f.join("memory"),
            repo_root().join("templates"),
            f.join("store.jsonl"),
            env!("CARGO_BIN_EXE_mosaic"),
            f.join("sandbox.jsonl"),
        ),
    )
    .unwrap();
    let run = mosaic(&["solve", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(run.status.code(), Some(0), "{}{}", stdout(&run), stderr(&run));
    let stub = mosaic(&["solve", "--config", &config_arg(), "--out", p(dir.path()), "--run-id", "proc-stub"]);
    assert_eq!(stub.status.code(), Some(0));
    let read = |id: &str| fs::read_to_string(dir.path().join(id).join("result.jsonl")).unwrap().replace(id, "");
    assert_eq!(read("proc"), read("proc-stub"), "both sandboxes speak the same protocol");
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let run = mosaic(&["solve", "--mode", "sometimes"]);
    assert_eq!(run.status.code(), Some(2), "clap usage error");
    let run = mosaic(&["solve", "--config", &config_arg(), "--timeout-s", "0"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("timeout_s"));
}

#[test]
fn saved_config_reproduces_the_run() {
    let out = tempfile::tempdir().unwrap();
    let first = mosaic(&["solve", "--config", &config_arg(), "--out", p(out.path())]);
    assert_eq!(first.status.code(), Some(0));
    let dir = out.path().join("replay-demo");
    let results = fs::read(dir.join("result.jsonl")).unwrap();
    let saved = out.path().join("saved.toml");
    fs::copy(dir.join("config.toml"), &saved).unwrap();
    fs::remove_dir_all(&dir).unwrap();
    let again = mosaic(&["solve", "--config", p(&saved)]);
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    assert_eq!(fs::read(dir.join("result.jsonl")).unwrap(), results);
}
