use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::Instant;

fn escalate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_escalate")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn calibrate_limit() {
    let o = escalate(&["calibrate", "--gamma", "0.25", "--theta", "1e-6"]);
    assert!(o.status.success());
    let a: f64 = stdout(&o).trim().parse().unwrap();
    assert!((a - 0.5).abs() < 1e-4);

    let o = escalate(&["calibrate", "--gamma", "0.25", "--theta", "0.2", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["a"].as_f64().unwrap() - 0.398).abs() < 0.005);

    let o = escalate(&["calibrate", "--gamma", "0.25", "--theta", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_skeleton_matches_recursion() {
    let o = escalate(&["calibrate-skeleton", "--m", "6", "--prior-mtd", "2", "--gamma", "0.25", "--delta", "0.05", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let values: Vec<f64> = v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let (g, d) = (0.25f64, 0.05f64);
    let mut want = vec![0.0; 6];
    want[1] = g;
    for i in 2..6 {
        want[i] = (g + d).powf(want[i - 1].ln() / (g - d).ln());
    }
    want[0] = (g - d).powf(g.ln() / (g + d).ln());
    for (a, b) in values.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    let o = escalate(&["calibrate-skeleton", "--m", "6", "--prior-mtd", "2", "--gamma", "0.25", "--delta", "0.05"]);
    assert_eq!(stdout(&o).split_whitespace().count(), 6);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(escalate(&["calibrate", "--gamma", "x", "--theta", "0.1"]).status.code(), Some(1));
    assert_eq!(escalate(&["bogus"]).status.code(), Some(1));
    assert_eq!(escalate(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("six-dose.json");
    let run = |out: &str, threads: &str| {
        let out_dir = dir.path().join(out);
        let started = Instant::now();
        let o = escalate(&[
            "simulate",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--reps",
            "10",
            "--threads",
            threads,
            "--quiet",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(started.elapsed().as_secs_f64() < 5.0);
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "2");
    for name in ["six-dose.csv", "six-dose.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("six-dose.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 20240601);
    assert_eq!(manifest["reps"], 10);
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("six-dose.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["designs"].as_array().unwrap().len(), 4);
    assert_eq!(report["config"]["designs"][0]["cohort_size"], 1);
    let header = std::fs::read_to_string(a.join("six-dose.csv")).unwrap();
    assert!(header.starts_with("design,scenario,dose,selection_pct"));
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"designs": [], "scenarios": [], "colour": 1}"#).unwrap();
    let o = escalate(&["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let o = escalate(&["simulate", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn conduct(input: &str) -> String {
    let design = configs().join("everolimus-cibp.design.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_escalate"))
        .args(["conduct", design.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    stdout(&o)
}

#[test]
fn conduct_follows_everolimus_trajectory() {
    let out = conduct("0 0 0\n1 0 0\nstop safety\n");
    let prompts: Vec<&str> = out.matches("next cohort at d").collect();
    assert_eq!(prompts.len(), 3);
    assert!(out.contains("next cohort at d1> "));
    let after_two = out.split("next cohort at d").nth(3).unwrap();
    assert!(after_two.starts_with("1>"), "{out}");
    assert!(out.contains("selected MTD d"));
}

#[test]
fn conduct_overrides_and_rejections() {
    let out = conduct("d3 0 0 0\n0 2\nquit\n");
    assert!(out.contains("rejected"));
    assert!(out.contains("patients 3 / 33"));
}

#[test]
fn serve_answers_http() {
    use std::io::{BufRead, BufReader, Read};
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_escalate"))
        .args(["serve", "--port", "0"])
        .env("ESCALATE_DATA_DIR", dir.path())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split("http://").nth(1).unwrap().split_whitespace().next().unwrap().to_string();

    let design = std::fs::read_to_string(configs().join("everolimus-crm.design.json")).unwrap();
    let body = format!(r#"{{"id": "smoke", "design": {design}}}"#);
    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "POST /v1/trials HTTP/1.1\r\nhost: x\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"recommendation\":1"));
    assert!(dir.path().join("smoke.jsonl").exists());
}
