use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

use mhrag_core::pipeline::fixtures_dir;

fn mhrag(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mhrag"));
    c.current_dir(dir)
        .arg("--index")
        .arg(dir.join("index.mhix"))
        .env_remove("MHRAG_API_TOKEN");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    mhrag(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn corpus() -> String {
    fixtures_dir().join("corpus").display().to_string()
}

fn dataset() -> String {
    fixtures_dir().join("dataset.jsonl").display().to_string()
}

#[test]
fn ingest_then_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&run(dir.path(), &["ingest", &corpus(), "--json"]));
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["documents"], 3);
    assert!(dir.path().join("index.mhix").exists());

    let out = stdout(&run(
        dir.path(),
        &["query", "How much was Microsoft Cloud revenue?", "--json"],
    ));
    let r: Value = serde_json::from_str(&out).unwrap();
    assert!(r["answer"].as_str().unwrap().contains("$111.6 billion"));
    let citations = r["citations"].as_array().unwrap();
    assert!(!citations.is_empty());
    assert!(citations[0].as_str().unwrap().starts_with("msft_2023:"));
    assert_eq!(r["trace_id"].as_str().unwrap().len(), 64);

    let again = stdout(&run(
        dir.path(),
        &["query", "How much was Microsoft Cloud revenue?", "--json"],
    ));
    assert_eq!(out, again);

    let plain = stdout(&run(
        dir.path(),
        &["query", "How much was Microsoft Cloud revenue?"],
    ));
    assert!(plain.contains("sources: msft_2023:"));
    assert!(plain.contains(&format!("trace: {}", r["trace_id"].as_str().unwrap())));

    let out = stdout(&run(dir.path(), &["remove", "msft_2023", "--json"]));
    let removed: Value = serde_json::from_str(&out).unwrap();
    assert!(removed["removed"].as_u64().unwrap() > 0);
    let out = stdout(&run(
        dir.path(),
        &["query", "How much was Microsoft Cloud revenue?", "--json"],
    ));
    let r: Value = serde_json::from_str(&out).unwrap();
    assert!(r["context"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| !c.as_str().unwrap().starts_with("msft_2023:")));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["ingest", "/definitely/not/here"],
        vec!["query", "   "],
        vec!["eval", "run", "--dataset", "/nope.jsonl"],
    ] {
        let o = run(dir.path(), &args);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn fixture_profile_rejects_network_backends() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.toml");
    std::fs::write(
        &cfg,
        r#"
profile = "fixture"

[models]
backend = "http"

[models.http]
embedding_dim = 8
embedding = { base_url = "http://localhost:1", model = "e" }
generator = { base_url = "http://localhost:1", model = "g" }
"#,
    )
    .unwrap();
    let o = run(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "query", "anything"],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr)
        .unwrap()
        .contains("fixture profile"));
}

#[test]
fn eval_run_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "eval".to_string(),
            "run".into(),
            "--dataset".into(),
            dataset(),
            "--corpus".into(),
            corpus(),
            "--out".into(),
            out.into(),
            "--profile".into(),
            "fixture".into(),
        ]
    };
    let a = run(
        dir.path(),
        &args("a").iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let b = run(
        dir.path(),
        &args("b").iter().map(String::as_str).collect::<Vec<_>>(),
    );
    assert_eq!(stdout(&a), stdout(&b));
    for f in ["report.jsonl", "report.md"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f}");
    }
    let jsonl = std::fs::read_to_string(dir.path().join("a/report.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 3);
}

#[test]
fn eval_ablate_runs_six_variants() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "eval",
            "ablate",
            "--dataset",
            &dataset(),
            "--corpus",
            &corpus(),
            "--out",
            "grid",
        ],
    );
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 8);
    for line in table.lines().skip(2) {
        let cells: Vec<&str> = line.split('|').map(str::trim).collect();
        assert_eq!(cells[3], "0", "{line}");
    }
    for i in 1..=6 {
        assert!(dir.path().join(format!("grid/variant-{i}.jsonl")).exists());
    }
    assert!(dir.path().join("grid/ablation.md").exists());
}

#[test]
fn eval_human_rollup() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("judgments.jsonl");
    std::fs::write(
        &path,
        [
            r#"{"record_id": "a", "verdict": "correct", "confident": true}"#,
            r#"{"record_id": "b", "verdict": "incorrect", "confident": true}"#,
            r#"{"record_id": "c", "verdict": "refused", "confident": false}"#,
            r#"{"record_id": "d", "verdict": "correct", "confident": false}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let out = stdout(&run(
        dir.path(),
        &["eval", "human", "--judgments", path.to_str().unwrap()],
    ));
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["accuracy"], 0.5);
    assert_eq!(r["reliability"], 0.5);
    assert_eq!(r["hallucination_rate"], 0.5);
}

#[test]
fn chat_answers_until_quit() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&run(dir.path(), &["ingest", &corpus()]));
    let mut child = mhrag(dir.path())
        .arg("chat")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"How much was Microsoft Cloud revenue?\n/quit\nnever read\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let text = stdout(&out);
    assert!(text.contains("[web_search] ok"), "{text}");
    assert!(text.contains("$111.6 billion"), "{text}");
    assert!(text.contains("sources: msft_2023:"), "{text}");
    assert!(!text.contains("never read"));
}

#[cfg(unix)]
#[test]
fn serve_answers_healthz_and_snapshots_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.toml");
    std::fs::write(
        &cfg,
        format!(
            "profile = \"fixture\"\n[corpus]\npaths = [{:?}]\n",
            corpus()
        ),
    )
    .unwrap();
    let mut child = mhrag(dir.path())
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "serve",
            "--profile",
            "fixture",
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    let body: Value = ureq::get(&format!("{url}/healthz"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(body["status"], "ok");
    assert_eq!(body["index"]["documents"], 3);

    let status = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(child.wait().unwrap().success());
    assert!(dir.path().join("index.mhix").exists());
    assert!(dir.path().join("sessions").is_dir());
}
