use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ablab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ablab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/bios.jsonl")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const ALL_ON: &str = r#"{"simulation": true, "cloning": true, "exemplar_models": true, "lookup_eol": true, "advanced_parameters": true}"#;

fn group(id: &str) -> String {
    format!(r#"{{"group_id": "{id}", "flags": {ALL_ON}}}"#)
}

const SMALL_SCRIPT: &str = r#"{
  "phases": [{"name": "Phase I", "sessions": 1}, {"name": "Phase II", "sessions": 1}],
  "learners": 3,
  "base_model": "wolf-sheep-grass",
  "seed": 1,
  "policies": {"A": {"kind": "guided"}, "B": {"kind": "unguided"}}
}"#;

#[test]
fn analyze_prints_fixture_coverage() {
    let o = ablab(&["analyze", s(&fixture())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("78.57"), "{out}");
    assert!(out.contains("71.43"), "{out}");
}

#[test]
fn analyze_writes_analytics_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = ablab(&["analyze", s(&fixture()), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(dir.path().join("analytics.json")).unwrap();
    ablab_core::analytics::parse_report(&bytes).unwrap();
}

#[test]
fn unknown_flags_exit_1() {
    assert_eq!(ablab(&["analyze", "--bogus", "x"]).status.code(), Some(1));
    assert_eq!(ablab(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    assert_eq!(ablab(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_file_exits_2() {
    let o = ablab(&["analyze", "/nonexistent/events.jsonl"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_log_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(fixture()).unwrap();
    let first = good.lines().next().unwrap();
    let path = dir.path().join("events.jsonl");
    std::fs::write(&path, format!("{first}\n{{not json\n")).unwrap();
    let o = ablab(&["analyze", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn empty_log_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    std::fs::write(&path, "").unwrap();
    let out = dir.path().join("out");
    let o = ablab(&["analyze", s(&path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report =
        ablab_core::analytics::parse_report(&std::fs::read(out.join("analytics.json")).unwrap())
            .unwrap();
    assert!(report.parameter_space.is_empty());
    assert!(report.coverage.is_empty());
    assert!(report.groups.is_empty());
}

#[test]
fn create_and_links_on_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let body = format!(
        r#"{{"name": "pilot", "mode": "manual", "groups": [{}, {}]}}"#,
        group("g1"),
        group("g2")
    );
    std::fs::write(&spec, body).unwrap();
    let data = dir.path().join("data");
    let o = ablab(&["create", s(&spec), "--data-dir", s(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let view: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let id = view["experiment"]["id"].as_str().unwrap().to_string();
    let o = ablab(&["links", &id, "--data-dir", s(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.lines().next().unwrap().starts_with("g1\t"), "{out}");
}

#[test]
fn create_with_three_groups_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let body = format!(
        r#"{{"name": "x", "mode": "random", "groups": [{}, {}, {}]}}"#,
        group("g1"),
        group("g2"),
        group("g3")
    );
    std::fs::write(&spec, body).unwrap();
    let o = ablab(&[
        "create",
        s(&spec),
        "--data-dir",
        s(&dir.path().join("data")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("exactly two groups"), "{}", stderr(&o));
}

#[test]
fn create_without_target_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let body = format!(
        r#"{{"name": "x", "mode": "random", "groups": [{}, {}]}}"#,
        group("g1"),
        group("g2")
    );
    std::fs::write(&spec, body).unwrap();
    assert_eq!(ablab(&["create", s(&spec)]).status.code(), Some(1));
}

#[test]
fn links_against_unreachable_server_exits_2() {
    let o = ablab(&["links", "exp-0001", "--server", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_learners_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, SMALL_SCRIPT).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ablab(&[
            "simulate-learners",
            s(&script),
            "--seed",
            "7",
            "--out",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("run7a"), run("run7b"));
    let events = std::fs::read(a.join("events.jsonl")).unwrap();
    assert!(!events.is_empty());
    assert_eq!(events, std::fs::read(b.join("events.jsonl")).unwrap());
    let analytics = std::fs::read(a.join("analytics.json")).unwrap();
    assert_eq!(analytics, std::fs::read(b.join("analytics.json")).unwrap());

    let replay = dir.path().join("replay");
    let o = ablab(&["analyze", s(&a.join("events.jsonl")), "--out", s(&replay)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(replay.join("analytics.json")).unwrap(),
        analytics
    );

    let charts = dir.path().join("charts");
    let o = ablab(&["report", s(&a.join("analytics.json")), "--out", s(&charts)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["coverage.svg", "patterns.svg"] {
        let svg = std::fs::read_to_string(charts.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}: {svg}");
    }
}

#[test]
fn invalid_script_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(
        &script,
        SMALL_SCRIPT.replace("\"learners\": 3", "\"learners\": 0"),
    )
    .unwrap();
    let o = ablab(&["simulate-learners", s(&script)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
