//! End-to-end behavior of the binary: exit codes, staged artifacts, and
//! cache semantics.

mod common;

use std::path::Path;

use common::{bin, stderr_of, stdout_of, synthetic_corpus, write_corpus, MockServer};

fn corpus_file(dir: &Path, notes: usize, meds: usize, text_len: usize) -> String {
    let path = dir.join("corpus.jsonl");
    write_corpus(&synthetic_corpus(notes, meds, text_len), &path);
    path.display().to_string()
}

#[test]
fn staged_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_file(dir.path(), 10, 2, 300);
    let out = dir.path().join("artifacts");
    let base = [
        "--corpus",
        corpus.as_str(),
        "--output-dir",
        out.to_str().unwrap(),
        "--provider",
        "synthetic",
        "--synthetic-accuracy",
        "0.8",
    ];
    for stage in ["summarize", "predict", "sweep", "analyze", "report"] {
        let output = bin().args(base).arg(stage).output().unwrap();
        assert!(
            output.status.success(),
            "{stage} failed: {}",
            stderr_of(&output)
        );
    }
    for artifact in [
        "summaries.jsonl",
        "predictions/manifest.json",
        "predictions/turn_1.jsonl",
        "predictions/turn_18.jsonl",
        "split.json",
        "scores.csv",
        "frequency.csv",
        "intersection.csv",
        "report.json",
    ] {
        assert!(out.join(artifact).exists(), "missing artifact {artifact}");
    }

    let report = bin().args(base).arg("report").output().unwrap();
    let text = stdout_of(&report);
    assert!(text.contains("selected ensemble"), "report output: {text}");
    assert!(text.contains("8568 combinations"), "report output: {text}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_file(dir.path(), 2, 1, 100);
    let out = dir.path().join("artifacts");
    let out = out.to_str().unwrap();

    // Usage/validation problems exit 2.
    let no_corpus = bin().args(["summarize", "--provider", "synthetic"]).output().unwrap();
    assert_eq!(no_corpus.status.code(), Some(2), "{}", stderr_of(&no_corpus));

    let unknown_turn = bin()
        .args(["--corpus", &corpus, "--output-dir", out, "--provider", "synthetic"])
        .args(["predict", "--turns", "19"])
        .output()
        .unwrap();
    assert_eq!(unknown_turn.status.code(), Some(2));
    assert!(stderr_of(&unknown_turn).contains("unknown turn id 19"));

    let no_key = bin()
        .args(["--corpus", &corpus, "--output-dir", out, "--provider", "http"])
        .arg("summarize")
        .env_remove("CONSENSUS_DX_API_KEY")
        .output()
        .unwrap();
    assert_eq!(no_key.status.code(), Some(2));
    assert!(stderr_of(&no_key).contains("CONSENSUS_DX_API_KEY"));

    let replay_without_cache = bin()
        .args(["--corpus", &corpus, "--output-dir", out, "--provider", "replay"])
        .arg("summarize")
        .output()
        .unwrap();
    assert_eq!(replay_without_cache.status.code(), Some(2));

    let bad_fraction = bin()
        .args(["--corpus", &corpus, "--output-dir", out, "--provider", "synthetic"])
        .args(["--fraction", "1.5", "sweep"])
        .output()
        .unwrap();
    assert_eq!(bad_fraction.status.code(), Some(2));

    // Missing upstream artifacts are runtime failures: exit 1.
    let no_sweep = bin()
        .args(["--corpus", &corpus, "--output-dir", out, "--provider", "synthetic"])
        .arg("analyze")
        .output()
        .unwrap();
    assert_eq!(no_sweep.status.code(), Some(1));
    assert!(stderr_of(&no_sweep).contains("sweep"));

    let no_predictions = bin()
        .args(["--corpus", &corpus, "--output-dir", out, "--provider", "synthetic"])
        .arg("sweep")
        .output()
        .unwrap();
    assert_eq!(no_predictions.status.code(), Some(1));

    // Bad invocations are clap usage errors: exit 2.
    let bogus = bin().arg("bogus-command").output().unwrap();
    assert_eq!(bogus.status.code(), Some(2));
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn config_file_with_an_api_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"provider": {"kind": "synthetic", "api_key": "sk-should-never-be-here"}}"#,
    )
    .unwrap();
    let output = bin()
        .args(["--config", config.to_str().unwrap(), "summarize"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("api_key"));
}

#[test]
fn predict_writes_only_the_requested_turn_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_file(dir.path(), 4, 1, 100);
    let out = dir.path().join("artifacts");
    let base = [
        "--corpus",
        corpus.as_str(),
        "--output-dir",
        out.to_str().unwrap(),
        "--provider",
        "synthetic",
    ];
    assert!(bin().args(base).arg("summarize").status().unwrap().success());
    let output = bin()
        .args(base)
        .args(["predict", "--turns", "2,7,10,13,14"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));

    let turn_files: Vec<String> = std::fs::read_dir(out.join("predictions"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|name| name.starts_with("turn_"))
        .collect();
    assert_eq!(turn_files.len(), 5, "turn files: {turn_files:?}");
    for id in [2, 7, 10, 13, 14] {
        assert!(turn_files.contains(&format!("turn_{id}.jsonl")));
    }
}

#[test]
fn sweep_with_k1_reduces_to_single_turn_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_file(dir.path(), 6, 1, 100);
    let out = dir.path().join("artifacts");
    let base = [
        "--corpus",
        corpus.as_str(),
        "--output-dir",
        out.to_str().unwrap(),
        "--provider",
        "synthetic",
    ];
    assert!(bin().args(base).arg("summarize").status().unwrap().success());
    assert!(bin().args(base).arg("predict").status().unwrap().success());
    let output = bin().args(base).args(["sweep", "-k", "1"]).output().unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));

    let csv = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "turns,split,correct,total,accuracy");
    assert_eq!(rows.len(), 1 + 18, "one row per turn");
    let mut seen: Vec<u8> = rows[1..]
        .iter()
        .map(|row| row.split(',').next().unwrap().parse().unwrap())
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (1..=18).collect::<Vec<u8>>());
}

#[test]
fn warm_cache_rerun_makes_no_upstream_calls() {
    let server = MockServer::serve("Condensed clinical course: stable on current regimen.");
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_file(dir.path(), 2, 1, 2600);
    let out = dir.path().join("artifacts");
    let cache = dir.path().join("cache");
    let base = [
        "--corpus",
        corpus.as_str(),
        "--output-dir",
        out.to_str().unwrap(),
        "--provider",
        "http",
        "--base-url",
        server.base_url.as_str(),
        "--cache-dir",
        cache.to_str().unwrap(),
        "--rate-limit",
        "0",
    ];

    let cold = bin()
        .args(base)
        .arg("summarize")
        .env("CONSENSUS_DX_API_KEY", "test-key")
        .output()
        .unwrap();
    assert!(cold.status.success(), "{}", stderr_of(&cold));
    // 2600-char notes: the 2000 length needs one call per note, 4000 passes
    // through.
    assert!(stdout_of(&cold).contains("2 upstream calls"), "{}", stdout_of(&cold));
    assert_eq!(server.hits(), 2);

    let warm = bin()
        .args(base)
        .arg("summarize")
        .env("CONSENSUS_DX_API_KEY", "test-key")
        .output()
        .unwrap();
    assert!(warm.status.success(), "{}", stderr_of(&warm));
    assert!(stdout_of(&warm).contains("0 upstream calls"), "{}", stdout_of(&warm));
    assert_eq!(server.hits(), 2, "warm run must not touch the server");
}

#[test]
fn reruns_are_byte_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_file(dir.path(), 8, 2, 300);
    let out = dir.path().join("artifacts");
    let base = [
        "--corpus",
        corpus.as_str(),
        "--output-dir",
        out.to_str().unwrap(),
        "--provider",
        "synthetic",
    ];
    for stage in ["summarize", "predict", "sweep", "analyze"] {
        assert!(bin().args(base).arg(stage).status().unwrap().success());
    }
    let artifacts = ["scores.csv", "frequency.csv", "intersection.csv", "report.json", "split.json"];
    let before: Vec<Vec<u8>> = artifacts
        .iter()
        .map(|name| std::fs::read(out.join(name)).unwrap())
        .collect();
    for stage in ["sweep", "analyze"] {
        assert!(bin().args(base).arg(stage).status().unwrap().success());
    }
    for (name, expected) in artifacts.iter().zip(&before) {
        let after = std::fs::read(out.join(name)).unwrap();
        assert_eq!(&after, expected, "{name} changed across reruns");
    }
}
