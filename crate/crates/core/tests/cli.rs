use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

use serde_json::Value;
use tempfile::TempDir;

fn onenet() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_onenet"));
    c.env_remove("ONENET_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    onenet().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--stage-epochs",
    "1,1,1,2",
    "--single-task-epochs",
    "2",
    "--char-dim",
    "4",
    "--char-hidden",
    "4",
    "--word-dim",
    "8",
    "--word-hidden",
    "8",
    "--quiet",
];

/// A small generated corpus in a fresh directory.
fn corpus() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    let out = run(&["generate", "--out", s(&tmp.path().join("probe"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("probe/spec.json")).unwrap()).unwrap();
    v["counts"] = serde_json::json!({"train": 8, "tune": 2, "test": 4});
    fs::write(&spec, v.to_string()).unwrap();
    let dir = tmp.path().join("corpus");
    let out = run(&["generate", "--spec", s(&spec), "--out", s(&dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    (tmp, dir)
}

fn train(dir: &Path, out: &Path, variant: &str, extra: &[&str]) -> Output {
    let (tr, tu, te) = (dir.join("train.jsonl"), dir.join("tune.jsonl"), dir.join("test.jsonl"));
    let mut args = vec![
        "train",
        "--variant",
        variant,
        "--train",
        s(&tr),
        "--tune",
        s(&tu),
        "--test",
        s(&te),
        "--out-dir",
        s(out),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn generate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (d, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let out = run(&["generate", "--out", s(d), "--seed", seed]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).contains("TOTAL"));
    }
    let read = |d: &Path| fs::read(d.join("train.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    for f in ["tune.jsonl", "test.jsonl", "train.schema.json", "spec.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
}

#[test]
fn train_eval_predict_round_trip() {
    let (tmp, dir) = corpus();
    let run_dir = tmp.path().join("run");
    let out = train(&dir, &run_dir, "joint", &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(run_dir.join("models/joint.ckpt").exists());
    assert!(run_dir.join("models/joint.ckpt.manifest").exists());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["config"].as_str().unwrap().contains("variant = joint"));
    assert_eq!(manifest["corpus_sha256"].as_object().unwrap().len(), 3);

    let report = tmp.path().join("eval.json");
    let out = run(&[
        "eval",
        "--models",
        s(&run_dir.join("models")),
        "--corpus",
        s(&dir.join("test.jsonl")),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("AVG"));
    assert_eq!(fs::read(&report).unwrap(), fs::read(run_dir.join("report.json")).unwrap());

    let mut child = onenet()
        .args(["predict", "--models", s(&run_dir.join("models"))])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"[\"wake\", \"me\", \"at\", \"seven\"]\n\n{\"tokens\": [\"call\", \"mom\"]}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["line"], 1);
    assert_eq!(lines[1]["line"], 3);
    for l in &lines {
        assert!(l["domain"].is_string());
        assert!(l["intent"].is_string());
        assert_eq!(l["slots"].as_array().unwrap().len(), l["tokens"].as_array().unwrap().len());
        assert!(l["spans"].is_array());
    }
}

#[test]
fn predict_reports_bad_lines_and_exits_nonzero() {
    let (tmp, dir) = corpus();
    let run_dir = tmp.path().join("run");
    assert!(train(&dir, &run_dir, "joint", &[]).status.success());
    let input = tmp.path().join("in.jsonl");
    fs::write(&input, "[\"hello\"]\nnot json\n[]\n{\"words\": []}\n").unwrap();
    let out = run(&["predict", "--models", s(&run_dir.join("models")), "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(1));
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].get("error").is_none());
    for l in &lines[1..] {
        assert!(l["error"].is_string(), "{l}");
    }
    assert!(stderr(&out).contains("3 line(s)"));
}

#[test]
fn oracle_prediction_needs_gold_domain() {
    let (tmp, dir) = corpus();
    let run_dir = tmp.path().join("run");
    let out = train(&dir, &run_dir, "oracle-domain", &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let input = tmp.path().join("in.jsonl");
    fs::write(&input, "{\"tokens\": [\"snooze\"], \"domain\": \"alarm\"}\n[\"snooze\"]\n").unwrap();
    let out = run(&["predict", "--models", s(&run_dir.join("models")), "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(1));
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["domain"], "alarm");
    assert!(lines[1]["error"].as_str().unwrap().contains("domain"));
}

#[test]
fn compare_evaluates_all_four_variants() {
    let (tmp, dir) = corpus();
    let out_dir = tmp.path().join("cmp");
    let (tr, tu, te) = (dir.join("train.jsonl"), dir.join("tune.jsonl"), dir.join("test.jsonl"));
    let mut args = vec![
        "compare",
        "--train",
        s(&tr),
        "--tune",
        s(&tu),
        "--test",
        s(&te),
        "--out-dir",
        s(&out_dir),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let reports: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    let names: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["independent", "pipeline", "oracle-domain", "joint"]);
    assert_eq!(reports[2]["total"]["domain_accuracy"], 100.0);
    let text = stdout(&out);
    for v in names {
        assert!(text.contains(v));
    }
}

#[test]
fn config_file_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\nseed = 3\nlearning-rate = fast\n").unwrap();
    let out = run(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("run.cfg") && err.contains(":3"), "{err}");
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn config_file_paths_are_relative_to_the_file() {
    let (tmp, dir) = corpus();
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "variant = joint\ntrain = corpus/train.jsonl\ntune = corpus/tune.jsonl\nout_dir = out\nstage_epochs = 0,0,0,1\nword_dim = 8\nword_hidden = 8\nchar_dim = 4\nchar_hidden = 4\n",
    )
    .unwrap();
    let out = onenet()
        .args(["train", "--config", s(&cfg), "--quiet"])
        .current_dir("/")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("out/models/joint.ckpt").exists());
    assert!(dir.exists());
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let (tmp, dir) = corpus();
    let out = train(&dir, &tmp.path().join("r"), "joint", &["--dropout-keep", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dropout"), "{}", stderr(&out));
}

#[test]
fn seed_env_overrides_config_file_but_not_flags() {
    let (tmp, dir) = corpus();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "seed = 3\ntrain = corpus/train.jsonl\n").unwrap();
    let seed_of = |name: &str, extra: &[&str]| {
        let run_dir = tmp.path().join(name);
        let mut args = vec!["train", "--config", s(&cfg), "--out-dir", s(&run_dir)];
        args.extend_from_slice(TINY);
        args.extend_from_slice(extra);
        let out = onenet().args(&args).env("ONENET_SEED", "77").output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let manifest: Value =
            serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
        manifest["seed"].clone()
    };
    assert_eq!(seed_of("env", &[]), 77);
    assert_eq!(seed_of("flag", &["--seed", "5"]), 5);
    assert!(dir.exists());
}

#[test]
fn eval_rejects_labels_unknown_to_the_models() {
    let (tmp, dir) = corpus();
    let run_dir = tmp.path().join("run");
    assert!(train(&dir, &run_dir, "joint", &[]).status.success());
    let odd = tmp.path().join("odd.jsonl");
    fs::write(
        &odd,
        "{\"tokens\":[\"play\",\"jazz\"],\"domain\":\"music\",\"intent\":\"play\",\"slots\":[\"O\",\"B-genre\"]}\n",
    )
    .unwrap();
    let out = run(&["eval", "--models", s(&run_dir.join("models")), "--corpus", s(&odd)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("music"), "{}", stderr(&out));
}

#[test]
fn corpus_errors_name_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"tokens\":[\"a\"],\"domain\":\"d\",\"intent\":\"i\",\"slots\":[\"O\"]}\n{\"tokens\":[\"a\",\"b\"],\"domain\":\"d\",\"intent\":\"i\",\"slots\":[\"O\",\"I-x\"]}\n",
    )
    .unwrap();
    let out = run(&["train", "--train", s(&bad), "--out-dir", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("bad.jsonl") && err.contains('2'), "{err}");
}

#[test]
fn gradcheck_passes_and_detects_injected_faults() {
    let out = run(&["gradcheck"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("encoder.fwd.weights"));
    let out = run(&["gradcheck", "--inject-fault", "sigmoid:1.01"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gradient check failed"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}
