use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mentigo(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mentigo"))
        .args(args)
        .env_remove("MENTIGO_KB_PATH")
        .env_remove("MENTIGO_PORT")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_kb_reports_counts() {
    let o = mentigo(&["validate-kb"], "");
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(
        out.starts_with("OK: 6 stages, 23 states, 20 strategies\n"),
        "{out}"
    );
    assert!(out.contains("8 state categories, 5 strategy categories"));
}

#[test]
fn validate_kb_rejects_a_broken_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kb.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("kb/fixture.json")).unwrap())
            .unwrap();
    doc["states"].as_array_mut().unwrap().pop();
    std::fs::write(&path, doc.to_string()).unwrap();

    let o = mentigo(&["--kb", path.to_str().unwrap(), "validate-kb"], "");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));

    let o = mentigo(&["--kb", "/no/such/kb.json", "validate-kb"], "");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn chat_then_replay_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("chat.jsonl");
    let o = mentigo(
        &[
            "chat",
            "--trace",
            "--seed",
            "4",
            "--out",
            log.to_str().unwrap(),
        ],
        "The bins are always full.\n\nWe could add more bins?\n",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.matches("mentor> ").count(), 3, "{out}");
    assert_eq!(out.matches("stage=1 states=[23] strategy=18").count(), 2);

    let o = mentigo(&["replay", log.to_str().unwrap()], "");
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("student: We could add more bins?"), "{out}");

    let o = mentigo(&["replay", "--json", log.to_str().unwrap()], "");
    let session: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(session["decisions"].as_array().unwrap().len(), 2);

    let csv = dir.path().join("eng.csv");
    let turns = dir.path().join("turns.csv");
    let o = mentigo(
        &[
            "analyze",
            dir.path().to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
            "--turns-out",
            turns.to_str().unwrap(),
        ],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.matches("total 2").count(), 2, "{out}");
    assert!(out.contains("decisions 2 in 1 session(s)"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);
    let coded = std::fs::read_to_string(&turns).unwrap();
    assert_eq!(coded.lines().count(), 3);
    assert!(coded.contains(",Positive,"), "{coded}");
}

#[test]
fn corrupt_log_is_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{\"seq\":1,\"kind\":\"created\"\nnot json\n").unwrap();
    let o = mentigo(&["replay", log.to_str().unwrap()], "");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CorruptLog at seq 1"));

    let o = mentigo(
        &["replay", dir.path().join("missing.jsonl").to_str().unwrap()],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_personas_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("episodes.csv");
    let logs = dir.path().join("logs");
    let o = mentigo(
        &[
            "simulate",
            root().join("personas").to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            csv.to_str().unwrap(),
            "--log-dir",
            logs.to_str().unwrap(),
        ],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("persona,session_id,rounds,stages_reached,"));
    let golden = text
        .lines()
        .find(|l| l.starts_with("golden_low_carbon,"))
        .unwrap();
    let cols: Vec<_> = golden.split(',').collect();
    assert_eq!((cols[2], cols[3]), ("12", "6"));
    assert_eq!(std::fs::read_dir(&logs).unwrap().count(), 5);
}

#[test]
fn serve_reports_a_bind_failure() {
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let o = mentigo(&["serve", "--port", &port], "");
    assert_eq!(o.status.code(), Some(3));
}
