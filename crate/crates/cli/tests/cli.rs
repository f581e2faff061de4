use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biopsim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small phantom case under `root/case`.
fn make_case(root: &Path) -> PathBuf {
    let spec = root.join("spec.json");
    std::fs::write(&spec, r#"{"dims": [66, 66, 66], "spacing_mm": [1.0, 1.0, 1.0]}"#).unwrap();
    let case = root.join("case");
    ok(&["gen-phantom", "--spec", s(&spec), "--seed", "4", "--id", "small", "--out", s(&case)]);
    case
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Every file under `dir` with its contents, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert!(o.stdout.is_empty());
    assert_eq!(run(&["partition"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = stdout(&help);
    for sub in ["gen-phantom", "partition", "simulate", "replay", "stats", "serve"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["partition", "--case", s(&dir.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"gnu": {}}"#).unwrap();
    let o = run(&["--config", s(&bad), "stats", "--sessions-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn partition_passes_the_monte_carlo_check() {
    let dir = tempfile::tempdir().unwrap();
    let case = make_case(dir.path());
    let report = dir.path().join("partition.json");
    let out = ok(&["partition", "--case", s(&case), "--out", s(&report)]);
    assert!(out.contains("PASS"), "{out}");
    let r = read_json(&report);
    assert_eq!(r["pass"], true);
    assert_eq!(r["samples"], 1_000_000);
    let sectors = r["sectors"].as_array().unwrap();
    assert_eq!(sectors.len(), 12);
    let target = r["total_volume_mm3"].as_f64().unwrap() / 12.0;
    for sec in sectors {
        for key in ["exact_mm3", "monte_carlo_mm3"] {
            let v = sec[key].as_f64().unwrap();
            assert!((v / target - 1.0).abs() <= 0.005, "{sec}");
        }
    }
    assert_eq!(r["partition"]["cuts"].as_array().unwrap().len(), 11);

    let o = run(&["partition", "--case", s(&case), "--tolerance", "1e-12", "--samples", "1000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn noiseless_replay_scores_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let case = make_case(dir.path());
    let config = dir.path().join("noiseless.json");
    let zero = r#"{"angular_noise_deg": 0, "lateral_bias_mm": 0, "insertion_noise_mm": 0,
        "declaration_error_rate": 0, "skill_spread": 0, "talent_rate": 0}"#;
    std::fs::write(&config, format!(r#"{{"expert": {zero}, "novice": {zero}}}"#)).unwrap();
    let data = dir.path().join("data");
    ok(&[
        "--config", s(&config), "simulate", "--case", s(&case), "--experts", "2", "--novices", "2", "--seed", "9",
        "--sessions-dir", s(&data),
    ]);
    let log = std::fs::read_dir(data.join("sessions/expert-01")).unwrap().next().unwrap().unwrap().path();
    let feedback = dir.path().join("feedback.json");
    let out = ok(&["replay", "--log", s(&log), "--case", s(&case), "--out", s(&feedback)]);
    assert!(out.contains("score 100.0%"), "{out}");
    assert!(out.contains("matches stored feedback: yes"));
    assert_eq!(read_json(&feedback)["percentage"], 100.0);

    // A log whose stored result disagrees with its cores is rejected.
    let tampered = dir.path().join("tampered.jsonl");
    let text = std::fs::read_to_string(&log).unwrap().replace("\"percentage\":100.0", "\"percentage\":99.0");
    std::fs::write(&tampered, text).unwrap();
    let o = run(&["replay", "--log", s(&tampered), "--case", s(&case)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_and_stats_reports_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let case = make_case(dir.path());
    let sim = |name: &str| {
        let data = dir.path().join(name);
        let report = dir.path().join(format!("{name}.json"));
        let out = ok(&[
            "simulate", "--case", s(&case), "--seed", "3", "--sessions-dir", s(&data), "--out", s(&report),
        ]);
        (data, report, out)
    };
    let (data_a, report_a, out) = sim("a");
    let (data_b, report_b, _) = sim("b");
    assert!(out.contains("Mann-Whitney U="));
    assert!(!out.trim_start().starts_with('{'), "stdout carries a table, not the report");
    assert_eq!(std::fs::read(&report_a).unwrap(), std::fs::read(&report_b).unwrap());
    assert_eq!(snapshot(&data_a), snapshot(&data_b));

    let r = read_json(&report_a);
    assert_eq!(r["procedures"].as_array().unwrap().len(), 21);
    assert!(r["reliability"]["correlation"]["r"].is_number());
    assert!(r["construct"]["mann_whitney"]["u"].is_number());
    assert!(r["construct"]["mann_whitney"]["p"].is_number());

    let stats_report = dir.path().join("stats.json");
    let csv = dir.path().join("stats.csv");
    ok(&["stats", "--sessions-dir", s(&data_a), "--out", s(&stats_report), "--csv", s(&csv)]);
    assert_eq!(read_json(&stats_report), r);
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 22);
    assert!(rows.starts_with("procedure_id,user_id,cohort"));

    let experts = dir.path().join("experts.json");
    ok(&["stats", "--sessions-dir", s(&data_a), "--cohort", "expert", "--out", s(&experts)]);
    assert_eq!(read_json(&experts)["procedures"].as_array().unwrap().len(), 7);
    assert_eq!(run(&["stats", "--sessions-dir", s(&data_a), "--cohort", "alien"]).status.code(), Some(2));

    let o = run(&["simulate", "--case", s(&case), "--sessions-dir", s(&data_a)]);
    assert_eq!(o.status.code(), Some(1), "refuses to mix runs");
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let cases = dir.path().join("cases");
    std::fs::create_dir_all(&cases).unwrap();
    make_case(&cases);
    let mut child = bin()
        .args(["serve", "--port", "0", "--cases-dir", s(&cases), "--sessions-dir", s(&dir.path().join("data"))])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect(&line).to_string();

    let mut conn = std::net::TcpStream::connect(&addr).unwrap();
    write!(conn, "GET /api/cases HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"id\":\"small\""), "{resp}");
}
