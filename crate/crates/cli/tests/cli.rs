use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn stcray(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcray")).args(args).output().expect("spawn stcray")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write_config(dir: &Path, out: &Path, nonthreat: f64) -> PathBuf {
    let cfg = json!({
        "output_dir": out,
        "protocol": {
            "categories": ["gun"],
            "locations": ["center"],
            "poses": ["horizontal"],
            "clutter_levels": ["Limited"],
            "sublevels": [1],
            "baggage_types": ["suitcase"],
            "nonthreat_fraction": nonthreat,
            "image_size": [64, 64],
            "volume_depth": 16
        },
        "workers": 1
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

/// Build a two-scene dataset (one gun, one nonthreat) in `dir/out`.
fn tiny_build(dir: &Path) -> PathBuf {
    let out = dir.join("out");
    let cfg = write_config(dir, &out, 0.5);
    let o = stcray(&["build", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn build_writes_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let manifest = lines(&out.join("manifest.jsonl"));
    assert_eq!(manifest.len(), 2);
    for rec in &manifest {
        assert!(out.join(rec["image_path"].as_str().unwrap()).is_file());
    }
    for task in ["scene", "refer", "grounding", "vqa"] {
        assert!(out.join(format!("instructions_{task}.jsonl")).is_file());
    }
}

#[test]
fn rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let first = fs::read(out.join("manifest.jsonl")).unwrap();
    fs::remove_dir_all(out.join("records")).unwrap();
    let cfg = dir.path().join("config.json");
    assert!(stcray(&["build", "--config", s(&cfg)]).status.success());
    assert_eq!(fs::read(out.join("manifest.jsonl")).unwrap(), first);
}

#[test]
fn unwritable_output_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = write_config(dir.path(), &blocker.join("out"), 0.0);
    let o = stcray(&["build", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flags_exit_two() {
    assert_eq!(stcray(&["build", "--bogus"]).status.code(), Some(2));
    assert_eq!(stcray(&["instruct", "--manifest", "m", "--out", "o", "--tasks", "chat"]).status.code(), Some(2));
}

#[test]
fn missing_manifest_exits_three() {
    assert_eq!(stcray(&["stats", "--manifest", "/nonexistent/manifest.jsonl"]).status.code(), Some(3));
}

#[test]
fn instruct_emits_only_requested_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let inst = dir.path().join("inst");
    let o = stcray(&["instruct", "--manifest", s(&out.join("manifest.jsonl")), "--tasks", "scene", "--seed", "3", "--out", s(&inst)]);
    assert!(o.status.success());
    let names: Vec<_> = fs::read_dir(&inst).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["instructions_scene.jsonl"]);
    assert_eq!(lines(&inst.join("instructions_scene.jsonl")).len(), 2);
}

#[test]
fn refer_and_grounding_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let threats: usize = lines(&out.join("manifest.jsonl"))
        .iter()
        .map(|r| r["metadata"]["threats"].as_array().unwrap().len())
        .sum();
    assert_eq!(lines(&out.join("instructions_refer.jsonl")).len(), threats);
    let grounding = lines(&out.join("instructions_grounding.jsonl"));
    assert_eq!(grounding.len(), 1);
    for rec in grounding {
        assert!(rec["conversations"][0]["value"].as_str().unwrap().starts_with("[grounding]"));
    }
}

fn write_predictions(instructions: &Path, path: &Path, reverse: bool) {
    let mut preds: Vec<String> = Vec::new();
    for task in ["scene", "refer", "grounding", "vqa"] {
        for rec in lines(&instructions.join(format!("instructions_{task}.jsonl"))) {
            let answer = &rec["conversations"][1]["value"];
            preds.push(json!({"id": rec["id"], "text": answer}).to_string());
        }
    }
    if reverse {
        preds.reverse();
    }
    fs::write(path, preds.join("\n") + "\n").unwrap();
}

#[test]
fn ground_truth_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let preds = dir.path().join("preds.jsonl");
    write_predictions(&out, &preds, false);
    let report_dir = dir.path().join("report");
    let o = stcray(&["eval", "--instructions", s(&out), "--predictions", s(&preds), "--out", s(&report_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scene"]["micro_f1"], 1.0);
    assert_eq!(report["grounding"]["overall"]["acc@0.5"], 1.0);
    assert_eq!(report["vqa"]["overall"], 1.0);
    assert!(report_dir.join("report.md").is_file());

    let shuffled = dir.path().join("shuffled.jsonl");
    write_predictions(&out, &shuffled, true);
    let again = dir.path().join("report2");
    assert!(stcray(&["eval", "--instructions", s(&out), "--predictions", s(&shuffled), "--out", s(&again)]).status.success());
    assert_eq!(fs::read(again.join("report.json")).unwrap(), fs::read(report_dir.join("report.json")).unwrap());
}

#[test]
fn unknown_prediction_ids_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let preds = dir.path().join("preds.jsonl");
    fs::write(&preds, json!({"id": "no_such_record", "text": "gun"}).to_string()).unwrap();
    let o = stcray(&["eval", "--instructions", s(&out), "--predictions", s(&preds), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_record"));
}

#[test]
fn stats_of_empty_manifest_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(&manifest, "").unwrap();
    let o = stcray(&["stats", "--manifest", s(&manifest)]);
    assert!(o.status.success());
    let stats: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["images"], 0);
    assert_eq!(stats["threat_instances"], 0);
}

#[test]
fn validate_reports_diversity() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_build(dir.path());
    let manifest = out.join("manifest.jsonl");
    let o = stcray(&["validate", "--manifest", s(&manifest), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean ROUGE-L"));
    // An unreachable threshold is a check failure, not a usage error.
    assert_eq!(stcray(&["validate", "--manifest", s(&manifest), "--threshold", "1.01"]).status.code(), Some(1));
}
