use std::path::Path;
use std::process::{Command, Output};

fn wm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("wm runs")
}

fn ok(args: &[&str]) -> String {
    let o = wm(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// A configuration that trains for two steps on two worlds.
fn tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "train_worlds": 2,
        "test_worlds": 1,
        "branch_test_worlds": 1,
        "completion": { "steps": 2, "batch": 1, "adv_batch": 1 },
        "wm": { "steps": 2, "batch": 1 },
        "replay_capacity": 4,
        "pseudo_copies": 2,
        "n_values": [1, 2]
    });
    let p = dir.join("tiny.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn world_simulation_and_fusion() {
    let d = tempfile::tempdir().unwrap();
    let out = |s: &str| d.path().join(s).to_str().unwrap().to_string();
    ok(&["gen-world", "--seed", "3", "--layout", "curve", "--out", &out("w")]);
    assert!(d.path().join("w/world.pwg").exists());
    ok(&["render", "--input", &out("w/world.pwg"), "--out", &out("r")]);
    assert!(d.path().join("r/world_ch6.pgm").exists());

    ok(&["simulate", "--seed", "4", "--out", &out("sim")]);
    let sweeps = std::fs::read_dir(d.path().join("sim/sweeps")).unwrap().count();
    assert_eq!(sweeps, 68);
    ok(&["build-bev", "--sweeps", &out("sim/sweeps"), "--out", &out("bev")]);
    for f in ["past.pwg", "full.pwg", "past_grid.pwg", "trajectory.json"] {
        assert!(d.path().join("bev").join(f).exists(), "{f}");
    }
    let bytes = std::fs::read(d.path().join("bev/past.pwg")).unwrap();
    assert_eq!(&bytes[..4], b"PWG1");
}

#[test]
fn staged_training_and_evaluation() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let out = |s: &str| d.path().join(s).to_str().unwrap().to_string();
    ok(&["--config", &cfg, "train-completion", "--out", &out("s1")]);
    assert!(d.path().join("s1/slvm.wmck").exists());
    ok(&[
        "--config",
        &cfg,
        "gen-pseudo",
        "--models",
        &out("s1"),
        "--out",
        &out("corpus"),
    ]);
    assert!(d.path().join("corpus/00003_star.pwg").exists());
    ok(&[
        "--config",
        &cfg,
        "train-wm",
        "--corpus",
        &out("corpus"),
        "--out",
        &out("s2"),
    ]);
    let metrics = std::fs::read_to_string(d.path().join("s2/wm_metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let model = out("s2/wm.wmck");
    ok(&[
        "--config",
        &cfg,
        "sample",
        "--model",
        &model,
        "--past",
        &out("corpus/00000_past.pwg"),
        "-n",
        "2",
        "--out",
        &out("samples"),
    ]);
    assert!(d.path().join("samples/sample_001.pwg").exists());
    ok(&["--config", &cfg, "eval", "--model", &model, "--out", &out("eval")]);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("eval/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_values"], serde_json::json!([1, 2]));
    assert_eq!(report["branch"]["worlds"], 1);
}

#[test]
fn errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        wm(&["--config", bad.to_str().unwrap(), "gen-world"]).status.code(),
        Some(10)
    );
    std::fs::write(&bad, r#"{"n_values": [2, 4]}"#).unwrap();
    assert_eq!(
        wm(&["--config", bad.to_str().unwrap(), "gen-world"]).status.code(),
        Some(2)
    );
    let out = d.path().to_str().unwrap();
    assert_eq!(
        wm(&["render", "--input", "/nonexistent.pwg", "--out", out])
            .status
            .code(),
        Some(9)
    );
    let junk = d.path().join("junk.pwg");
    std::fs::write(&junk, b"nope").unwrap();
    assert_eq!(
        wm(&["render", "--input", junk.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(6)
    );
}
