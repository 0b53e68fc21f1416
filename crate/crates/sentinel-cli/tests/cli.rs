//! Integration tests driving the compiled binary through the offline
//! pipeline and its error paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sentinel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sentinel"))
}

fn run(args: &[&str]) -> Output {
    sentinel().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exemplars_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/exemplars")
}

/// Small trained setup shared by the pipeline tests.
fn make_corpus_and_model(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus.csv");
    let model = dir.join("model.bin");
    assert_ok(&run(&[
        "synth",
        "--out",
        corpus.to_str().unwrap(),
        "--days",
        "2",
        "--ues",
        "4",
        "--samples-per-ue",
        "150",
        "--malicious-ues",
        "1",
        "--attack-fraction",
        "0.4",
    ]));
    assert_ok(&run(&[
        "train",
        "--input",
        corpus.to_str().unwrap(),
        "--model-out",
        model.to_str().unwrap(),
        "--max-epochs",
        "2",
        "--patience",
        "1",
    ]));
    (corpus, model)
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in ["synth", "train", "detect", "explain", "experiment", "report"] {
        let out = run(&[cmd, "--help"]);
        assert_ok(&out);
        assert!(!out.stdout.is_empty());
    }
    assert_ok(&run(&["--help"]));
}

#[test]
fn offline_pipeline_detect_explain_report() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, model) = make_corpus_and_model(dir.path());
    let preds = dir.path().join("preds.jsonl");
    let out = run(&[
        "detect",
        "--model",
        model.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    let window_id = lines[0]["window_id"].as_str().unwrap().to_string();
    assert!(lines.iter().all(|l| l["probability"].as_f64().is_some()));

    // Record against the mock provider, then replay; reports must agree
    // byte-for-byte once timings are stripped.
    let session = dir.path().join("session.json");
    let report1 = dir.path().join("report1.json");
    let report2 = dir.path().join("report2.json");
    let base = [
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--window-id",
        &window_id,
        "--shap-samples",
        "128",
        "--global-windows",
        "2",
    ];
    let mut record_args: Vec<&str> = base.to_vec();
    record_args.extend(["--provider", "mock", "--record", session.to_str().unwrap()]);
    record_args.extend(["--out", report1.to_str().unwrap()]);
    assert_ok(&run(&record_args));

    let mut replay_args: Vec<&str> = base.to_vec();
    replay_args.extend(["--replay", session.to_str().unwrap()]);
    replay_args.extend(["--out", report2.to_str().unwrap()]);
    assert_ok(&run(&replay_args));

    let strip = |path: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timings_ms");
        v["insight"].as_object_mut().unwrap().remove("latency_ms");
        v
    };
    assert_eq!(strip(&report1), strip(&report2));
    assert_ok(&run(&["report", "--input", report2.to_str().unwrap()]));

    // Few-shot against the shipped exemplar fixtures.
    let report_few = dir.path().join("report_few.json");
    let mut few_args: Vec<&str> = base.to_vec();
    let exemplars = exemplars_dir();
    few_args.extend(["--mode", "few", "--exemplars", exemplars.to_str().unwrap()]);
    few_args.extend(["--provider", "mock", "--out", report_few.to_str().unwrap()]);
    assert_ok(&run(&few_args));
    let few: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_few).unwrap()).unwrap();
    assert_eq!(few["prompt_mode"], "few_shot");

    // Few-shot without exemplars is a config error.
    let mut bad_args: Vec<&str> = base.to_vec();
    bad_args.extend(["--mode", "few", "--provider", "mock"]);
    let out_path = dir.path().join("unused.json");
    bad_args.extend(["--out", out_path.to_str().unwrap()]);
    let out = run(&bad_args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));

    // Provider failure after retries: report with null insight, exit 3.
    let report_fail = dir.path().join("report_fail.json");
    let mut fail_args: Vec<&str> = base.to_vec();
    fail_args.extend(["--provider", "mock-fail", "--max-retries", "0"]);
    fail_args.extend(["--out", report_fail.to_str().unwrap()]);
    let out = run(&fail_args);
    assert_eq!(out.status.code(), Some(3));
    let fail: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_fail).unwrap()).unwrap();
    assert!(fail["insight"].is_null());
    assert!(fail["readability"].is_null());
    assert_ok(&run(&["report", "--input", report_fail.to_str().unwrap()]));

    // Unknown window id is a config error.
    let mut missing_args: Vec<&str> = base.to_vec();
    missing_args[5] = "no-such-window";
    missing_args.extend(["--provider", "mock"]);
    let out_path2 = dir.path().join("unused2.json");
    missing_args.extend(["--out", out_path2.to_str().unwrap()]);
    assert_eq!(run(&missing_args).status.code(), Some(2));
}

#[test]
fn detect_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, model) = make_corpus_and_model(dir.path());

    // Corrupted model file.
    let broken = dir.path().join("broken.bin");
    std::fs::write(&broken, b"not a model").unwrap();
    std::fs::copy(
        dir.path().join("model.bin.meta.json"),
        dir.path().join("broken.bin.meta.json"),
    )
    .unwrap();
    let out = run(&[
        "detect",
        "--model",
        broken.to_str().unwrap(),
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("z.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model parse error"));

    // Header-only CSV: zero outputs, warning, exit 0.
    let header = std::fs::read_to_string(&corpus).unwrap().lines().next().unwrap().to_string();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, format!("{header}\n")).unwrap();
    let out_file = dir.path().join("e.jsonl");
    let out = run(&[
        "detect",
        "--model",
        model.to_str().unwrap(),
        "--input",
        empty.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(std::fs::read_to_string(&out_file).unwrap(), "");
}

#[test]
fn experiment_artifacts_and_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.yaml");
    std::fs::write(
        &config,
        "synth:\n  days: 2\n  ues: 3\n  samples_per_ue: 120\n  malicious_ues: 1\n  \
         attack_fraction: 0.3\n  seed: 42\nwindows: [2, 3]\nratios: [0.0, 0.3]\nseeds: [1]\n\
         hidden_dim: 4\nmax_epochs: 2\npatience: 1\n",
    )
    .unwrap();
    let out1 = dir.path().join("out1");
    assert_ok(&run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out1.to_str().unwrap(),
    ]));
    for artifact in
        ["table4.csv", "fig5_fpr.csv", "fig5_fnr.csv", "fig4_series.csv", "summary.json", "effective-config.yaml"]
    {
        assert!(out1.join(artifact).exists(), "missing {artifact}");
    }

    // The emitted effective config re-runs to identical results.
    let out2 = dir.path().join("out2");
    assert_ok(&run(&[
        "experiment",
        "--config",
        out1.join("effective-config.yaml").to_str().unwrap(),
        "--out-dir",
        out2.to_str().unwrap(),
    ]));
    let strip = |p: PathBuf| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("runtime_secs");
        v
    };
    assert_eq!(strip(out1.join("summary.json")), strip(out2.join("summary.json")));
    assert_eq!(
        std::fs::read_to_string(out1.join("table4.csv")).unwrap(),
        std::fs::read_to_string(out2.join("table4.csv")).unwrap()
    );

    // Unknown config keys are named in the error.
    let bad = dir.path().join("bad.yaml");
    std::fs::write(&bad, "windoww: 3\n").unwrap();
    let out = run(&[
        "experiment",
        "--config",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().join("outbad").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("windoww"));
}
