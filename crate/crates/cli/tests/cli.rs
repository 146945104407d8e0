use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tmlga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmlga"))
        .args(args)
        .env("TMLGA_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tmlga(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 8] = ["--num-videos", "12", "--num-test-videos", "4", "--n", "16", "--moment-len-range", "4,8"];

fn synth(dir: &Path, seed: &str) {
    let mut args = vec!["synth", "--out", s(dir), "--seed", seed];
    args.extend_from_slice(&SMALL);
    ok(&args);
}

const TINY: [&str; 10] = [
    "--epochs", "2", "--sentence-hidden", "3", "--attention-dim", "4", "--localization-hidden", "3", "--min-freq", "1",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let config = data.join("config.json");
    let mut args = vec!["train", "--config", s(&config), "--out", s(out)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    ok(&args)
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "7");
    synth(&b, "7");
    synth(&c, "8");
    let (ca, cb) = (dir_contents(&a), dir_contents(&b));
    assert_eq!(ca.len(), 16 + 5);
    assert_eq!(ca, cb);
    assert_ne!(ca, dir_contents(&c));
}

#[test]
fn train_predict_evaluate_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "3");
    let stdout = train(&data, &run, &[]);
    assert!(stdout.contains("\"accuracy\""), "{stdout}");
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,sample_count,mean_total,mean_main,mean_att\n"));

    let preds = tmp.path().join("preds.jsonl");
    let ckpt = run.join("checkpoint.tmlc");
    ok(&["predict", "--checkpoint", s(&ckpt), "--manifest", s(&data.join("test.json")), "--out", s(&preds)]);
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 4);
    let report = ok(&["evaluate", "--predictions", s(&preds), "--alphas", "0.1,0.5"]);
    let first: serde_json::Value = serde_json::from_str(report.lines().next().unwrap()).unwrap();
    assert_eq!(first["count"], 4);
    assert!(first["accuracy"]["0.1"].as_f64().unwrap() >= first["accuracy"]["0.5"].as_f64().unwrap());

    let dump = ok(&[
        "dump-attention", "--checkpoint", s(&ckpt), "--manifest", s(&data.join("test.json")),
        "--video", "test_00000", "--query", "person opens the door",
    ]);
    let rows: Vec<&str> = dump.lines().collect();
    assert_eq!(rows[0], "index,a_i");
    assert_eq!(rows.len(), 17);
    let total: f64 = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn identical_seeds_and_resume_are_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    train(&data, &a, &[]);
    train(&data, &b, &[]);
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.tmlc")).unwrap(), fs::read(b.join("checkpoint.tmlc")).unwrap());

    train(&data, &c, &["--epochs", "1"]);
    let first = c.join("checkpoint.tmlc");
    let resumed = tmp.path().join("resumed");
    train(&data, &resumed, &["--resume", s(&first)]);
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(resumed.join("loss.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoint.tmlc")).unwrap(),
        fs::read(resumed.join("checkpoint.tmlc")).unwrap()
    );
}

#[test]
fn resume_with_other_vocabulary_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("d1"), tmp.path().join("d2"));
    synth(&d1, "1");
    let mut args = vec!["synth", "--out", s(&d2), "--num-actions", "3"];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let run = tmp.path().join("run");
    train(&d1, &run, &["--epochs", "1"]);
    let config = d2.join("config.json");
    let ckpt = run.join("checkpoint.tmlc");
    let other = tmp.path().join("x");
    let mut args = vec!["train", "--config", s(&config), "--out", s(&other), "--resume", s(&ckpt)];
    args.extend_from_slice(&TINY);
    let out = tmlga(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn exact_predictions_score_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("test.json")).unwrap()).unwrap();
    let mut lines = String::new();
    for e in manifest["entries"].as_array().unwrap() {
        let a = &e["annotations"][0];
        lines.push_str(&format!(
            "{{\"video_id\":{},\"query\":{},\"t_s_pred\":{},\"t_e_pred\":{},\"tau_s\":1,\"tau_e\":1}}\n",
            e["video_id"], a["query"], a["t_s"], a["t_e"]
        ));
    }
    let preds = tmp.path().join("exact.jsonl");
    fs::write(&preds, lines).unwrap();
    let out = ok(&["evaluate", "--predictions", s(&preds), "--manifest", s(&data.join("test.json"))]);
    assert!(out.starts_with(r#"{"accuracy":{"0.3":1.0,"0.5":1.0,"0.7":1.0},"miou":1.0,"count":4}"#), "{out}");
}

#[test]
fn ablation_has_four_rows_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "4");
    let out = tmp.path().join("abl");
    let config = data.join("config.json");
    let mut args = vec!["ablate", "--config", s(&config), "--seeds", "1,2", "--out", s(&out)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(&["--epochs", "1"]);
    let table = ok(&args);
    for name in ["NLL", "KL", "NLL+AL", "KL+AL"] {
        assert!(table.lines().any(|l| l.split_whitespace().next() == Some(name)), "{table}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 8);
    assert_eq!(json["summary"].as_array().unwrap().len(), 4);
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--instances", "2", "--seed", "3"]);
    assert!(out.contains("all 34 checks"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(tmlga(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tmlga(&["evaluate", "--bogus"]).status.code(), Some(1));
    assert_eq!(tmlga(&["evaluate", "--predictions", "/nonexistent/p.jsonl"]).status.code(), Some(1));
    assert_eq!(tmlga(&["train", "--epochs", "3"]).status.code(), Some(1));
    assert_eq!(tmlga(&["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_tmlga"))
        .args(["gradcheck", "--instances", "1"])
        .env("TMLGA_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_value_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "6");
    let config = data.join("config.json");
    let out = tmlga(&["train", "--config", s(&config), "--out", s(&tmp.path().join("r")), "--learning-rate", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = tmlga(&["synth", "--out", s(&tmp.path().join("x")), "--num-actions", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
