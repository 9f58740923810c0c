use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bridget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridget")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_data_writes_a_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = configs().join("gen_data.json");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = bridget(&["gen-data", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 1001);
    assert_eq!(text.lines().next(), Some("x0,x1,label"));

    // Same spec without drift differs exactly on the flipped tail.
    let plain = write(dir.path(), "plain.json", r#"{"n": 1000, "separation": 4.0, "seed": 7}"#);
    let c = dir.path().join("c.csv");
    assert!(bridget(&["gen-data", "--spec", &plain, "--out", c.to_str().unwrap()]).status.success());
    let other = std::fs::read_to_string(&c).unwrap();
    let diffs: Vec<usize> = text
        .lines()
        .zip(other.lines())
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i - 1)
        .collect();
    assert_eq!(diffs.len(), 400);
    assert_eq!(diffs[0], 600);
}

#[test]
fn simulate_then_replay_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.json",
        r#"{"engine": {"k_max": 30}, "data": {"generator": {"n": 200, "separation": 4.0}}, "seeds": [3, 4]}"#,
    );
    let out = dir.path().join("run");
    let o = bridget(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
    assert_eq!(summary["runs"][0]["records"], 200);

    let log = out.join("seed-3.jsonl");
    let o = bridget(&["replay", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = stdout(&o);
    let hash = summary["runs"][0]["state_hash"].as_str().unwrap();
    assert!(text.contains(&format!("state_hash {hash}")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn damaged_journal_fails_replay_with_its_seq() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.json",
        r#"{"data": {"generator": {"n": 60, "separation": 4.0}}, "seeds": [1]}"#,
    );
    let out = dir.path().join("run");
    assert!(bridget(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(out.join("seed-1.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(9);
    let bad = write(dir.path(), "bad.jsonl", &(lines.join("\n") + "\n"));
    let o = bridget(&["replay", &bad]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    let text = stdout(&o);
    assert!(text.starts_with("FAIL") && text.contains("seq 9"), "{text}");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(bridget(&[]).status.code(), Some(2));
    assert_eq!(bridget(&["simulate", "--config"]).status.code(), Some(2));
    assert_eq!(bridget(&["replay", "/definitely/missing.jsonl"]).status.code(), Some(2));
    assert_eq!(bridget(&["simulate", "--config", "/definitely/missing.json", "--out", out]).status.code(), Some(2));

    let bad_tau = write(
        dir.path(),
        "tau.json",
        r#"{"engine": {"tau_demote": 0.9}, "data": {"generator": {"n": 10, "separation": 1.0}}, "seeds": [0]}"#,
    );
    let o = bridget(&["simulate", "--config", &bad_tau, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("engine.tau_demote"));

    let bad_spec = write(dir.path(), "spec.json", r#"{"n": 0, "separation": 1.0}"#);
    assert_eq!(bridget(&["gen-data", "--spec", &bad_spec, "--out", out]).status.code(), Some(2));
    let bad_serve = write(dir.path(), "serve.json", r#"{"engine": {"k_max": 0}}"#);
    assert_eq!(bridget(&["serve", "--port", "0", "--config", &bad_serve]).status.code(), Some(2));
}

#[test]
fn unreadable_csv_rows_are_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "d.csv", "x,label\n1.0,A\noops,B\n");
    let cfg = write(
        dir.path(),
        "csv.json",
        &format!(
            r#"{{"data": {{"csv": {{"path": {csv:?},
                "schema": {{"features": [{{"name": "x", "kind": "numeric"}}], "labels": ["A", "B"]}}}}}},
                "seed_rows": 0, "seeds": [0]}}"#
        ),
    );
    let out = dir.path().join("o");
    let o = bridget(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("csv row 3"), "{o:?}");

    let missing = write(dir.path(), "missing.json", &std::fs::read_to_string(&cfg).unwrap().replace(&csv, "/nope.csv"));
    assert_eq!(bridget(&["simulate", "--config", &missing, "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nhost: localhost\r\nconnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let sessions = dir.path().join("sessions");
    let cfg = write(dir.path(), "serve.json", &format!(r#"{{"sessions_dir": {:?}}}"#, sessions.to_str().unwrap()));
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_bridget"))
        .args(["serve", "--port", &port.to_string(), "--config", &cfg])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(r) = http_get(port, "/sessions/unknown/metrics") {
            break r;
        }
        assert!(Instant::now() < deadline, "server never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 404"), "{reply}");
    assert!(reply.contains("session_not_found"), "{reply}");
    assert!(sessions.is_dir());
}
