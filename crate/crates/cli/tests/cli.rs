use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn exe() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_musclerun"));
    c.env_remove("MUSCLERUN_TOKEN").env_remove("MUSCLERUN_TOKENS").env_remove("RUST_LOG");
    c
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ok(args: &[&str]) -> String {
    let out = exe().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> Output {
    let out = exe().args(args).output().unwrap();
    assert!(!out.status.success(), "{args:?} succeeded");
    out
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
}

#[test]
fn course_matches_reference() {
    let out = ok(&["course", "--seed", "42", "--difficulty", "2", "--max-obstacles", "5"]);
    assert_eq!(out, std::fs::read_to_string(data("course_seed42_d2_n5.txt")).unwrap());
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(out.as_bytes());
    let xs: Vec<f64> = r.records().map(|x| x.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(xs.len(), 5);
    assert!(xs.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn flat_course_has_no_obstacles() {
    let out = ok(&["course", "--seed", "42"]);
    assert!(out.lines().any(|l| l == "no obstacles"));
    assert!(out.contains("psoas_scale_r=1.0 psoas_scale_l=1.0"));
}

#[test]
fn runs_repeat_exactly() {
    let args = ["run", "--seed", "5", "--difficulty", "1", "--policy", "constant:0.2"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    assert!(a.starts_with("seed=5 difficulty=1 max_obstacles=3 reward="));
}

#[test]
fn logged_run_replays() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.csv");
    let log_s = log.to_str().unwrap();
    let script = data("actions_gallop.csv");
    let run = ok(&[
        "run",
        "--seed",
        "8",
        "--difficulty",
        "2",
        "--policy",
        &format!("scripted:{}", script.display()),
        "--log",
        log_s,
    ]);
    let replay = ok(&["replay", "--log", log_s]);
    assert!(replay.starts_with("verified records="));
    assert_eq!(field(&replay, "reward"), field(&run, "reward"));

    // A tampered log fails replay.
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row: Vec<&str> = lines[10].split(',').collect();
    let mut row: Vec<String> = row.into_iter().map(String::from).collect();
    row[2] = "1.5".into();
    lines[10] = row.join(",");
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let out = fails(&["replay", "--log", log_s]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("code=replay_mismatch"));
}

#[test]
fn scripted_run_matches_frozen_reward() {
    let script = data("actions_gallop.csv");
    let out = ok(&["run", "--seed", "8", "--difficulty", "2", "--policy", &format!("scripted:{}", script.display())]);
    assert_eq!(field(&out, "reward"), "-0.810329566727668");
    assert_eq!(field(&out, "steps"), "112");
    assert_eq!(field(&out, "termination"), "fell");
}

#[test]
fn errors_are_one_line() {
    for args in [
        &["run", "--difficulty", "3"][..],
        &["run", "--policy", "scripted:/nonexistent/actions.csv"],
        &["replay", "--log", "/nonexistent/log.csv"],
        &["run", "--model", "/nonexistent/model.toml"],
    ] {
        let out = fails(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        let lines: Vec<&str> = err.lines().collect();
        assert_eq!(lines.len(), 1, "{args:?}: {err}");
        assert!(lines[0].starts_with("error code="), "{err}");
    }
}

#[test]
fn analyze_writes_cycle_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cycle.csv");
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/golden_running_log.csv");
    let band = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/golden_running_cycle_right.csv");
    let stdout = ok(&[
        "analyze",
        "--log",
        golden.to_str().unwrap(),
        "--band",
        band.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(stdout.trim(), "agreement hip=1.0 knee=1.0 ankle=1.0");
    let table = std::fs::read_to_string(&out).unwrap();
    assert_eq!(table.lines().count(), 102);
    assert!(table.starts_with("percent,hip_mean,hip_sd,knee_mean,knee_sd,ankle_mean,ankle_sd\n"));
}

#[test]
fn serve_submit_board() {
    let dir = tempfile::tempdir().unwrap();
    let board = dir.path().join("board.jsonl");
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "name = \"tiny\"\nseeds = [1, 2]\ndifficulty = 1\nmax_obstacles = 3\n").unwrap();
    let mut server = exe()
        .args([
            "serve",
            "--bind",
            "127.0.0.1:0",
            "--spec",
            spec.to_str().unwrap(),
            "--leaderboard",
            board.to_str().unwrap(),
        ])
        .args(["--tokens", "t1,t2"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening=").unwrap().to_string();

    let sub = ok(&["submit", "--address", &addr, "--token", "t1", "--policy", "constant:0.1"]);
    assert!(sub.contains("spec=tiny score="), "{sub}");
    let denied = fails(&["submit", "--address", &addr, "--token", "nobody"]);
    let err = String::from_utf8_lossy(&denied.stderr);
    assert!(err.contains("code=auth_error"), "{err}");
    server.kill().unwrap();
    server.wait().unwrap();

    let b = ok(&["board", "--path", board.to_str().unwrap()]);
    assert_eq!(b.lines().count(), 1);
    assert!(b.starts_with("1,t1,"));
}
