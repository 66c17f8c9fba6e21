use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/promise_synthetic.csv")
}

fn fewshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json stdout")
}

const MOCKS: &str = r#"
[[models]]
name = "echo"
kind = "chat"
backend = { type = "mock", answer = "echo_gold" }

[[models]]
name = "always-nfr"
kind = "chat"
backend = { type = "mock", answer = "constant", label = "NFR" }

[[models]]
name = "hill"
kind = "chat"
backend = { type = "mock", answer = "schedule", points = [
    { shots = 0, accuracy = 0.5 },
    { shots = 5, accuracy = 0.7 },
    { shots = 10, accuracy = 0.9 },
    { shots = 20, accuracy = 0.85 },
] }
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "[dataset]\npath = {:?}\nscheme = \"promise-binary\"\n\n{body}\n{MOCKS}",
        data_csv().to_str().unwrap()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn dry_run_prints_full_cell_matrix_without_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut models = String::new();
    for i in 0..7 {
        models.push_str(&format!(
            "[[models]]\nname = \"llm-{i}\"\nkind = \"chat\"\nbackend = {{ type = \"openai\", base_url = \"http://127.0.0.1:9/v1\", model = \"m{i}\", api_key_env = \"UNSET_FOR_TEST\" }}\n\n"
        ));
    }
    let cfg = dir.path().join("grid.toml");
    std::fs::write(
        &cfg,
        format!("[dataset]\npath = \"does/not/exist.csv\"\nscheme = \"promise-binary\"\n\n{models}"),
    )
    .unwrap();
    let v = json_of(&fewshot(&[
        "--dry-run",
        "--json",
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(v["cells"], 168);
    assert_eq!(v["matrix"].as_array().unwrap().len(), 168);
    let text = fewshot(&["--dry-run", "sweep", "--config", cfg.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("168 cells (7 models x 3 methods x 8 shot counts)"));
}

#[test]
fn ingest_reports_class_counts() {
    let v = json_of(&fewshot(&[
        "--json",
        "ingest",
        "--data",
        data_csv().to_str().unwrap(),
        "--scheme",
        "promise-binary",
    ]));
    assert_eq!(v["total"], 625);
    assert_eq!(v["classes"][0]["count"], 255);
    assert_eq!(v["classes"][1]["count"], 370);
}

#[test]
fn missing_file_is_a_data_error_naming_the_path() {
    let out = fewshot(&["ingest", "--data", "no/such/file.csv", "--scheme", "promise-binary"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/file.csv"));
}

#[test]
fn unknown_label_reports_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "text,label\nthe system shall X,F\nit shall be quick,Perf\n").unwrap();
    let out = fewshot(&["ingest", "--data", csv.to_str().unwrap(), "--scheme", "promise-binary"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Perf") && err.contains('2'), "{err}");
}

#[test]
fn fold_count_one_rejected_before_anything_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = fewshot(&["cv", "--config", cfg.to_str().unwrap(), "--folds", "1", "--no-cache"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("folds"));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[split]\nfolds = 10\nstratify = true\n");
    let out = fewshot(&["--dry-run", "sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stratify"));
}

#[test]
fn sweep_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[selection]\ngrid = [0, 5, 10]\n\n[run]\nmodels = [\"hill\", \"echo\"]\n",
    );
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let o = fewshot(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--no-cache",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        snapshots.push(files_under(&out_dir.join("sweep")));
    }
    assert!(snapshots[0].len() > 10);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn resumed_sweep_makes_no_model_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[selection]\ngrid = [0, 5]\nmethods = [\"tfidf\", \"random\"]\n\n[run]\nmodels = [\"echo\"]\n",
    );
    let cache = dir.path().join("cache");
    let args = |out: &str| {
        vec![
            "--json".to_string(),
            "sweep".into(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--cache-dir".into(),
            cache.to_str().unwrap().into(),
            "--out".into(),
            dir.path().join(out).to_str().unwrap().into(),
        ]
    };
    let first = json_of(&fewshot(&args("one").iter().map(String::as_str).collect::<Vec<_>>()));
    assert!(first["gateway"]["upstream_calls"].as_u64().unwrap() > 0);
    let second = json_of(&fewshot(&args("two").iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(second["gateway"]["upstream_calls"], 0);
}

#[test]
fn cv_takes_shots_from_sweep_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[selection]\ngrid = [0, 5, 10, 20]\nmethods = [\"tfidf\"]\n\n[run]\nmodels = [\"hill\"]\n",
    );
    let out_dir = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    let o = out_dir.to_str().unwrap();
    json_of(&fewshot(&["--json", "sweep", "--config", c, "--no-cache", "--out", o]));
    let v = json_of(&fewshot(&[
        "--json",
        "cv",
        "--config",
        c,
        "--no-cache",
        "--out",
        o,
        "--shots-from",
        o,
        "--method",
        "tfidf",
    ]));
    assert_eq!(v["reports"][0]["shots"], 10);
    assert_eq!(v["reports"][0]["split"], "kfold:10");
    assert_eq!(v["reports"][0]["n_predictions"], 625);
}

#[test]
fn echo_cv_table_and_constant_precision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nmodels = [\"echo\", \"always-nfr\"]\n");
    let out_dir = dir.path().join("out");
    let o = fewshot(&[
        "cv",
        "--config",
        cfg.to_str().unwrap(),
        "--no-cache",
        "--folds",
        "10",
        "--shots",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out_dir.join("cv/table.txt")).unwrap();
    let echo_row = table.lines().find(|l| l.starts_with("echo")).unwrap();
    assert!(echo_row.trim_end().ends_with("1.00"), "{table}");
    let nfr_row = table.lines().find(|l| l.starts_with("always-nfr")).unwrap();
    assert!(nfr_row.contains(" 0.59  1.00"), "{table}");
    assert_eq!(std::fs::read_dir(out_dir.join("cv/echo/folds")).unwrap().count(), 10);
}

#[test]
fn replay_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\nmodels = [\"hill\"]\n\n[selection]\nshots = 20\n");
    let out_dir = dir.path().join("out");
    let o = fewshot(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--no-cache",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = out_dir.join("run/hill/trace.jsonl");
    let report = out_dir.join("run/hill/report.json");
    let v = json_of(&fewshot(&[
        "--json",
        "replay",
        "--trace",
        trace.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]));
    assert_eq!(v["identical_to_original"], true);

    let text = std::fs::read_to_string(&trace).unwrap();
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, &text[..text.len() - 20]).unwrap();
    let out = fewshot(&["replay", "--trace", cut.to_str().unwrap(), "--scheme", "promise-binary"]);
    assert_ne!(out.status.code(), Some(0));
    let lines = text.lines().count();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("line {lines}")));
}

#[test]
fn select_shows_neighbours() {
    let v = json_of(&fewshot(&[
        "--json",
        "select",
        "--data",
        data_csv().to_str().unwrap(),
        "--scheme",
        "promise-binary",
        "--method",
        "tfidf",
        "--shots",
        "3",
        "--query",
        "The system shall encrypt every invoice stored in the database.",
        "--no-cache",
    ]));
    assert_eq!(v["k_delivered"], 3);
    assert_eq!(v["chosen"][0]["label"], "NFR");
}
