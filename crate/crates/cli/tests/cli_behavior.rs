//! Exit-code contract and command edge cases driven through the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn pfme() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pfme"));
    cmd.env_remove("PFME_API_KEY")
        .env_remove("PFME_ENDPOINT")
        .env_remove("PFME_CACHE_DIR");
    cmd
}

fn mock_setup(dir: &Path) -> PathBuf {
    std::fs::write(
        dir.join("mock.json"),
        r#"{"rules":[{"substring":"EXTRACT_ENTITIES","response":"[]"}],"default_response":"UNVERIFIABLE"}"#,
    )
    .unwrap();
    let config = dir.join("config.toml");
    std::fs::write(
        &config,
        "[chat]\nkind = \"mock\"\nscript = \"mock.json\"\n[embedding]\nkind = \"mock\"\n",
    )
    .unwrap();
    config
}

#[test]
fn missing_api_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "[chat]\nkind = \"openai\"\nendpoint = \"http://localhost:1\"\n",
    )
    .unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"id\":\"a\",\"passage\":\"Text.\"}\n").unwrap();
    let output = pfme()
        .args(["detect", input.to_str().unwrap(), "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("API key"));
}

#[test]
fn missing_input_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_setup(dir.path());
    let output = pfme()
        .args([
            "detect",
            dir.path().join("nope.jsonl").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn unknown_flag_exits_2() {
    let output = pfme().args(["detect", "x.jsonl", "--bogus"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn empty_input_gives_empty_output_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_setup(dir.path());
    let input = dir.path().join("empty.jsonl");
    std::fs::write(&input, "").unwrap();
    let out_path = dir.path().join("out.jsonl");
    let output = pfme()
        .args([
            "detect",
            input.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--fixtures",
            "--cache-dir",
            dir.path().join("cache").to_str().unwrap(),
            "-o",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out_path).unwrap(), "");
}

#[test]
fn evaluate_text_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(&gold, "{\"id\":\"a\",\"gold_annotated\":\"One thing.\"}\n").unwrap();
    std::fs::write(&pred, "{\"id\":\"a\",\"annotated\":\"Another thing.\"}\n").unwrap();
    let output = pfme()
        .args(["evaluate", gold.to_str().unwrap(), pred.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&output.stderr).contains("aligning"));
}

#[test]
fn evaluate_missing_prediction_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(
        &gold,
        "{\"id\":\"a\",\"gold_annotated\":\"<invented>X.</invented>\"}\n",
    )
    .unwrap();
    std::fs::write(&pred, "{\"id\":\"b\",\"annotated\":\"X.\"}\n").unwrap();
    let output = pfme()
        .args(["evaluate", gold.to_str().unwrap(), pred.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn emit_traces_includes_step_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_setup(dir.path());
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"id\":\"a\",\"passage\":\"Nothing known here.\"}\n").unwrap();
    let out_path = dir.path().join("out.jsonl");
    let output = pfme()
        .args([
            "detect",
            input.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--fixtures",
            "--cache-dir",
            dir.path().join("cache").to_str().unwrap(),
            "--emit-traces",
            "-o",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    let line = std::fs::read_to_string(&out_path).unwrap();
    let value: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    let traces = value["traces"].as_array().unwrap();
    assert_eq!(traces.len(), 1);
    let steps = traces[0]["steps"].as_array().unwrap();
    assert_eq!(steps[0]["step_name"], "verifiability");
    assert!(traces[0]["final_label"].is_string());
}

#[test]
fn retrieve_cache_rerun_is_noop() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_setup(dir.path());
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"id\":\"a\",\"passage\":\"Plain text.\"}\n").unwrap();
    let cache = dir.path().join("cache");
    let run = || {
        pfme()
            .args([
                "retrieve-cache",
                input.to_str().unwrap(),
                "--config",
                config.to_str().unwrap(),
                "--fixtures",
                "--cache-dir",
                cache.to_str().unwrap(),
            ])
            .output()
            .unwrap()
    };
    let first = run();
    assert_eq!(first.status.code(), Some(0));
    let manifest_1 = std::fs::read_to_string(cache.join("manifest.json")).unwrap();
    let second = run();
    assert_eq!(second.status.code(), Some(0));
    let manifest_2 = std::fs::read_to_string(cache.join("manifest.json")).unwrap();
    assert_eq!(manifest_1, manifest_2);
}

#[test]
fn parallel_jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = mock_setup(dir.path());
    let input = dir.path().join("in.jsonl");
    let mut lines = String::new();
    for i in 0..6 {
        lines.push_str(&format!(
            "{{\"id\":\"d{i}\",\"passage\":\"Statement number {i} here. Another {i} claim.\"}}\n"
        ));
    }
    std::fs::write(&input, lines).unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out_path = dir.path().join(format!("out{jobs}.jsonl"));
        let output = pfme()
            .args([
                "detect",
                input.to_str().unwrap(),
                "--config",
                config.to_str().unwrap(),
                "--fixtures",
                "--cache-dir",
                dir.path().join("cache").to_str().unwrap(),
                "--jobs",
                jobs,
                "-o",
                out_path.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
        outputs.push(std::fs::read(&out_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn evaluate_writes_csv_and_json_copies() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(
        &gold,
        "{\"id\":\"a\",\"gold_annotated\":\"<invented>Made up.</invented> Fine text.\"}\n",
    )
    .unwrap();
    let csv = dir.path().join("report.csv");
    let json = dir.path().join("report.json");
    let output = pfme()
        .args([
            "evaluate",
            gold.to_str().unwrap(),
            gold.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
            "--json",
            json.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("Editor,Entity,Relation"));
    let json_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(json_value["oa_f1"], 1.0);
    assert_eq!(json_value["bi_f1"], 1.0);
}
