//! The `satfusion` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satfusion")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn redundancy_command() {
    let out = ok(&["redundancy", "--n", "1", "--t", "4", "--h", "1024", "--w", "1024", "--gamma", "4", "--cms", "3"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["difference"], -1_310_720);
    assert_eq!(v["d_input"], 1_835_008);
    assert_eq!(v["break_even_t"], 11);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["redundancy", "--n", "1"]), 1);
    assert_eq!(code(&["redundancy", "--n", "1", "--t", "4", "--h", "1000", "--w", "1024", "--gamma", "3", "--cms", "3"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{}").unwrap();
    assert_eq!(code(&["ablate", "--config", s(&cfg), "--toggles", "no-colour"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sfim");
    fs::write(&bad, b"XXXX\x01\x00\x01\x01\x01\x00\x00\x00").unwrap();
    let out = run(&["metrics", "--a", s(&bad), "--b", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.sfim"));
    assert_eq!(code(&["ablate", "--config", s(&dir.path().join("missing.json")), "--toggles", "no-sam"]), 2);
    assert_eq!(code(&["eval", "--data", s(dir.path()), "--ckpt", s(&dir.path().join("none")), "--report", "r.json"]), 2);
}

#[test]
fn synth_train_eval_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--out", s(&p("set")), "--scenes", "6", "--size", "16", "--gamma", "2", "--frames", "3", "--epsilon", "1", "--seed", "7"]);
    assert!(p("set/set.json").is_file());
    assert!(p("set/scene_0005/lrms_02.sfim").is_file());

    let cfg = r#"{"fusion": {"c_hidden_encode": 4, "c_misr": 8, "c_hidden_sharpen": 4}, "epochs": 2, "batch_size": 2, "lr": 0.001, "seed": 1,
                  "loss": {"weights": [0.3, 0.3, 0.2, 0.2], "ssim": {"window": 5, "sigma": 1.5, "k1": 0.01, "k2": 0.03, "peak": 1.0}}}"#;
    fs::write(p("cfg.json"), cfg).unwrap();
    ok(&["train", "--data", s(&p("set")), "--config", s(&p("cfg.json")), "--out", s(&p("ckpt"))]);
    assert!(p("ckpt/manifest.json").is_file() && p("ckpt/history.json").is_file());

    ok(&["eval", "--data", s(&p("set")), "--ckpt", s(&p("ckpt")), "--report", s(&p("report.csv"))]);
    let report = fs::read_to_string(p("report.csv")).unwrap();
    assert!(report.starts_with("method,id,psnr"));
    assert!(report.lines().any(|l| l.starts_with("baseline,mean,")));

    ok(&[
        "fuse", "--scene", s(&p("set/scene_0000")), "--ckpt", s(&p("ckpt")), "--out", s(&p("sr.sfim")),
        "--png", s(&p("sr.png")), "--error-map", s(&p("err.pgm")),
    ]);
    assert!(fs::read(p("err.pgm")).unwrap().starts_with(b"P5\n16 16\n255\n"));
    let m: serde_json::Value = serde_json::from_str(&ok(&["metrics", "--a", s(&p("sr.sfim")), "--b", s(&p("sr.sfim")), "--gamma", "2"])).unwrap();
    assert_eq!((m["psnr"].as_f64(), m["sam"].as_f64(), m["ergas"].as_f64()), (Some(100.0), Some(0.0), Some(0.0)));

    ok(&["ablate", "--config", s(&p("cfg.json")), "--toggles", "no-ssim+no-sam,no-adjust", "--data-dir", s(&p("set")), "--report", s(&p("abl.json"))]);
    let abl: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("abl.json")).unwrap()).unwrap();
    assert_eq!(abl.as_array().unwrap().len(), 3);
    assert_eq!(abl[1]["loss_weights"], serde_json::json!([0.5, 0.5, 0.0, 0.0]));
}

#[test]
fn sweep_epsilon_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"fusion": {"gamma": 2, "c_hidden_encode": 4, "c_misr": 8, "c_hidden_sharpen": 4, "frames": 2}, "epochs": 1, "batch_size": 4, "seed": 2}"#).unwrap();
    let report = dir.path().join("sweep.tsv");
    ok(&["sweep-epsilon", "--config", s(&cfg), "--epsilons", "0,2", "--scenes", "4", "--size", "16", "--report", s(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.lines().any(|l| l.starts_with("epsilon=0\t")));
    assert!(text.lines().any(|l| l.starts_with("epsilon=2\t")));
}
