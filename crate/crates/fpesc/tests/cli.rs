use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fpesc::formats::load_checkpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fpesc"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn fpesc")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_command_lines_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&[][..], &["frobnicate"], &["oracle"], &["oracle", "--t", "abc"], &["eval"]] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn oracle_at_zero_prints_initial_moments() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["oracle", "--t", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["mu"], serde_json::json!([-4.0, -4.0]));
    assert_eq!(v["sigma"], serde_json::json!([[0.7, 0.0], [0.0, 1.3]]));
}

#[test]
fn oracle_off_grid_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["oracle", "--t", "0.0005"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("0.0005"));
}

#[test]
fn eval_missing_checkpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["eval", "--checkpoint", "nope.json"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("nope.json") && err.contains("No such file"), "{err}");
}

#[test]
fn train_eval_recover_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let o = run(dir.path(), &["train", "--config", cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("run-smoke");
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,loss_mean,loss_se,grad_norm,ms");
    assert_eq!(lines.len(), 4);
    assert!(out.join("checkpoint_000002.json").exists());
    let ck = out.join("checkpoint_final.json");
    assert!(ck.exists());

    let ck_s = ck.to_str().unwrap();
    let o = run(
        dir.path(),
        &["eval", "--checkpoint", ck_s, "--config", cfg, "--log", out.join("train_log.csv").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["grid_h"], 2.0);
    assert_eq!(report["meta"]["T"], 3.0);
    assert_eq!(report["stamps"].as_array().unwrap().len(), 11);
    for key in ["t", "ls", "ld", "mass"] {
        assert!(report["stamps"][0][key].is_number(), "{key}");
    }
    assert!(report["aggregate"]["ls"].is_number() && report["aggregate"]["ld"].is_number());
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,ls,ld,mass"));
    assert_eq!(csv.lines().count(), 12);
    let svg = std::fs::read_to_string(dir.path().join("report.svg")).unwrap();
    for title in ["Objective Value", "Score Estimation Error", "Density Estimation Error"] {
        assert!(svg.contains(title));
    }

    let o = run(
        dir.path(),
        &["recover", "--checkpoint", ck_s, "--config", cfg, "--t", "0.3", "--x", "-4,-3.5"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed: f64 = stdout(&o).trim().parse().unwrap();
    let field = load_checkpoint(&ck).unwrap();
    let conf = fpesc::config::Config::load(Path::new(cfg)).unwrap();
    let want = fpesc_core::eval::recover_log_density(
        &field,
        &conf.initial().unwrap(),
        &conf.domain().unwrap(),
        0.3,
        &[-4.0, -3.5],
        conf.eval.dt,
    )
    .unwrap();
    assert_eq!(printed, want);
}

#[test]
fn fine_grid_needs_explicit_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    let field = fpesc::config::Config::default().init_field().unwrap();
    fpesc::formats::save_checkpoint(&field, &ck).unwrap();
    let o = run(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--grid-h", "0.1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--full"));
}

#[test]
fn gradcheck_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("PASS").count(), 5, "{out}");
}
