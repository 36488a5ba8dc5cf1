use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coagree(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coagree"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const SYNTH: &str = r#"{
  "n_samples": 10000, "feature_dim": 4, "class_balance": 0.5,
  "annotators": [{"target_kappa": 1.0}, {"target_kappa": 0.8}, {"target_kappa": 0.75}, {"target_kappa": 0.7}],
  "seed": 17
}"#;

fn train_config(extra: &str) -> String {
    format!(
        r#"{{
  "synth": {{"n_samples": 300, "feature_dim": 4, "class_balance": 0.4,
             "annotators": [{{"target_kappa": 0.9}}, {{"target_kappa": 0.8, "flip_bias": 0.7}},
                            {{"target_kappa": 0.75, "flip_bias": 0.3}}, {{"target_kappa": 0.7}}],
             "missing_rate": 0.2}},
  "train": {{"epochs": 3, "learning_rate": 0.001, "model": {{"hidden": [8]}}{extra}}}
}}"#
    )
}

#[test]
fn synth_writes_dataset_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SYNTH).unwrap();
    let o = coagree(&["synth", "--config", "spec.json", "--out", "gen", "--quiet"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let gen = dir.path().join("gen");
    let lines = fs::read_to_string(gen.join("data.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10000);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(gen.join("data.sidecar.json")).unwrap()).unwrap();
    let realized = side["realized_kappa_vs_reference"].as_object().unwrap();
    let target = side["target_kappa"].as_object().unwrap();
    assert_eq!(realized.len(), 4);
    for (id, t) in target {
        let r = realized[id].as_f64().unwrap();
        assert!((r - t.as_f64().unwrap()).abs() <= 0.02, "{id}: {r} vs {t}");
    }
    let latent: serde_json::Value = serde_json::from_str(&fs::read_to_string(gen.join("data.latent.json")).unwrap()).unwrap();
    assert_eq!(latent["diagnostic_only"], true);
}

#[test]
fn synth_without_seed_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SYNTH.replace(",\n  \"seed\": 17", "");
    fs::write(dir.path().join("spec.json"), spec).unwrap();
    let o = coagree(&["synth", "--config", "spec.json", "--out", "gen"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    // the flag supplies it
    let o = coagree(&["synth", "--config", "spec.json", "--out", "gen", "--seed", "3", "--quiet"], dir.path());
    assert_eq!(code(&o), 0);
}

#[test]
fn train_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), train_config("")).unwrap();
    for out in ["a", "b"] {
        let o = coagree(&["train", "--config", "cfg.json", "--out", out, "--seed", "5", "--quiet"], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["history.csv", "report.json", "checkpoint.json"] {
        let a = fs::read_to_string(dir.path().join("a").join(f)).unwrap();
        let b = fs::read_to_string(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let history = fs::read_to_string(dir.path().join("a/history.csv")).unwrap();
    assert!(history.starts_with("epoch,classifier_loss,agreement_loss,total_loss,lr,delta\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
    assert!(report["report"]["delta"].as_f64().unwrap().is_finite());
    for key in ["per_annotator_kappa", "inter_annotator_kappa", "n_eval"] {
        assert!(report["report"].get(key).is_some(), "{key}");
    }
    // resolved defaults are echoed
    assert_eq!(report["config"]["train"]["loss"]["agreement_loss"], "ar");
    assert_eq!(report["config"]["train"]["batch_size"], 32);

    // evaluate the checkpoint on a fresh dataset file
    fs::write(dir.path().join("spec.json"), SYNTH).unwrap();
    let o = coagree(&["synth", "--config", "spec.json", "--out", "gen", "--quiet"], dir.path());
    assert_eq!(code(&o), 0);
    let o = coagree(
        &["evaluate", "--checkpoint", "a/checkpoint.json", "--dataset", "gen/data.jsonl", "--out", "ev"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ev: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(ev["n_eval"], 10000);
    assert!(dir.path().join("ev/eval_report.json").exists());
}

#[test]
fn inconsistent_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config(r#", "paradigm": "majority_voting", "loss": {"agreement_loss": "ar"}"#);
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let o = coagree(&["train", "--config", "cfg.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("o").exists());

    fs::write(dir.path().join("typo.json"), r#"{"synth": null, "trian": {}}"#).unwrap();
    assert_eq!(code(&coagree(&["train", "--config", "typo.json"], dir.path())), 2);
    assert_eq!(code(&coagree(&["train"], dir.path())), 2);
    assert_eq!(code(&coagree(&["train", "--config", "missing.json"], dir.path())), 2);
}

#[test]
fn runtime_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ck.json"), "not json").unwrap();
    fs::write(dir.path().join("spec.json"), SYNTH).unwrap();
    coagree(&["synth", "--config", "spec.json", "--out", ".", "--quiet"], dir.path());
    // unreadable output location is a runtime failure
    fs::write(dir.path().join("blocker"), "").unwrap();
    fs::write(dir.path().join("cfg.json"), train_config("")).unwrap();
    let o = coagree(&["train", "--config", "cfg.json", "--out", "blocker/x", "--quiet"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn matrix_counts_and_stable_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_config("").replace(
        "\n}",
        r#",
  "repeat_seeds": [1, 2, 3, 4, 5],
  "axes": {"classifier_loss": ["wkl", "focal_ce"], "agreement_variant": ["linear", "distributional"],
           "agreement_loss": ["rmse", "ar"]}
}"#,
    );
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let o = coagree(&["matrix", "--config", "cfg.json", "--out", "m", "--quiet"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(dir.path().join("m/matrix.csv")).unwrap();
    let summary = fs::read_to_string(dir.path().join("m/matrix_summary.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 40);
    assert_eq!(summary.lines().count(), 1 + 8);
    let keys: Vec<&str> = summary.lines().skip(1).map(|l| l.rsplitn(4, ',').last().unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let o = coagree(&["matrix", "--config", "cfg.json", "--out", "m2", "--quiet", "--sequential"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(rows, fs::read_to_string(dir.path().join("m2/matrix.csv")).unwrap());

    let empty = train_config("").replace("\n}", r#", "axes": {"paradigm": []}}"#);
    fs::write(dir.path().join("empty.json"), empty).unwrap();
    assert_eq!(code(&coagree(&["matrix", "--config", "empty.json", "--out", "e"], dir.path())), 2);
}

#[test]
fn annotator_baseline_ranks_reference() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), SYNTH).unwrap();
    coagree(&["synth", "--config", "spec.json", "--out", "gen", "--quiet"], dir.path());
    let o = coagree(&["annotator-baseline", "--dataset", "gen/data.jsonl", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b/annotator_baseline.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let best = rows
        .iter()
        .max_by(|a, b| a["delta"].as_f64().unwrap().total_cmp(&b["delta"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(best["annotator"], "a1");

    let two = SYNTH.replace(r#", {"target_kappa": 0.75}, {"target_kappa": 0.7}"#, "");
    fs::write(dir.path().join("two.json"), two).unwrap();
    coagree(&["synth", "--config", "two.json", "--out", "two", "--quiet"], dir.path());
    let o = coagree(&["annotator-baseline", "--dataset", "two/data.jsonl"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(">= 3 annotators"));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = coagree(&["grad-check", "--out", "g"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok:"));
    fs::write(dir.path().join("wkl.json"), r#"{"train": {"loss": {"classifier_loss": "wkl"}, "model": {"agreement_variant": "linear"}}}"#).unwrap();
    let o = coagree(&["grad-check", "--config", "wkl.json", "--seed", "3", "--quiet"], dir.path());
    assert_eq!(code(&o), 0);
}
