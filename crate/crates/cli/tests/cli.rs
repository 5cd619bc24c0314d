use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ddcl");

fn ddcl(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DDCL_SEED")
        .output()
        .expect("spawn ddcl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--episodes",
        "96",
        "--eval-episodes",
        "40",
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ddcl(&args)
}

#[test]
fn encode_prints_codewords_and_lengths() {
    let o = ddcl(&["encode", "--ints", "0,1,-1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("1 011 010"));
    assert_eq!(lines.next(), Some("encoded lengths: 1 3 3 (total 7)"));
    assert!(lines.next().unwrap().starts_with("ideal lengths: 0.0000 1.5850 1.5850"));
}

#[test]
fn decode_inverts_encode() {
    let o = ddcl(&["decode", "--bits", "1 011 010 00101"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0 1 -1 2");

    let o = ddcl(&["decode", "--frame", "d7010000000000000001000300000007b4"]);
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["m"], serde_json::json!([0, 1, -1]));
    assert_eq!(v["t"], 1);
}

#[test]
fn bad_frames_and_bits_fail() {
    // Wrong magic.
    let o = ddcl(&["decode", "--frame", "d8010000000000000001000300000007b4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame error 1"));
    let o = ddcl(&["decode", "--bits", "01x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ddcl(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ddcl(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ddcl(&["encode", "--ints", "0,4294967296"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = ddcl(&["train", "--lambda", "-1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = ddcl(&["sweep", "--lambdas", "1e-3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(ddcl(&["--help"]).status.success());
}

#[test]
fn train_writes_a_self_describing_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = tiny_train(&run, &["--seed", "5", "--lambda", "2e-3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let manifests: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .collect();
    assert_eq!(manifests.len(), 1);
    let m: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["lambda"], 2e-3);
    assert!(m["source_revision"].as_str().is_some_and(|s| !s.is_empty()));
    assert!(m["finished_unix"].as_f64() >= m["started_unix"].as_f64());
    for f in m["outputs"].as_array().unwrap() {
        assert!(run.join(f.as_str().unwrap()).exists(), "{f}");
    }

    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("episode,return,success,ideal_bits,encoded_bits"));
    assert_eq!(lines.count(), 96);

    // Re-running from the manifest reproduces the metrics byte for byte.
    let again = dir.path().join("again");
    let o = ddcl(&[
        "train",
        "--config",
        run.join("manifest.json").to_str().unwrap(),
        "--quiet",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(run.join("eval.jsonl")).unwrap(), fs::read(again.join("eval.jsonl")).unwrap());
}

#[test]
fn config_file_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"lambda": 0.001, "message_dims": 3, "hidden": [16]}"#).unwrap();
    let run = dir.path().join("run");
    let o = Command::new(BIN)
        .args(["train", "--config", cfg.to_str().unwrap(), "--episodes", "32"])
        .args(["--eval-episodes", "4", "--quiet", "--out", run.to_str().unwrap()])
        .env("DDCL_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c: Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(c["seed"], 77);
    assert_eq!(c["message_dims"], 3);
    assert_eq!(c["hidden"], serde_json::json!([16]));

    fs::write(&cfg, r#"{"lambda": 0.001, "lamda": 2}"#).unwrap();
    let o = ddcl(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_writes_per_goal_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(tiny_train(&run, &[]).status.success());
    let o = ddcl(&["analyze", run.to_str().unwrap(), "--samples", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pearson(frequency, bits/msg)"));

    let per_goal = fs::read_to_string(run.join("per_goal.csv")).unwrap();
    assert!(per_goal.starts_with(
        "goal_x,goal_y,probability,episodes,success_rate,mean_bits_per_episode,mean_bits_per_message,mean_steps"
    ));
    let heat = fs::read_to_string(run.join("heatmap_frequency.csv")).unwrap();
    let rows: Vec<&str> = heat.lines().collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[1].starts_with("0,0.515,"));
    for f in ["heatmap_bits.csv", "heatmap_speaker_ideal.csv", "heatmap_speaker_surrogate.csv", "analysis.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let m: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"per_goal.csv") && outputs.contains(&"metrics.csv"));

    assert_eq!(ddcl(&["analyze", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = ddcl(&[
        "sweep",
        "--lambdas",
        "1e-5,4e-3",
        "--episodes",
        "64",
        "--eval-episodes",
        "20",
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("rd_frontier.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,mean_bits_per_episode,success_rate,shannon_gap,error");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1e-5,") || lines[1].starts_with("0.00001,"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn verify_quick_mode_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddcl(&["verify", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(r["passed"], true);
    assert_eq!(r["full"], false);
    assert!(stdout(&o).lines().any(|l| l.starts_with("NOTE jensen_bound")));
}
