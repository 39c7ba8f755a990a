use std::path::Path;
use std::process::{Command, Output};

fn sekf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sekf"))
        .args(args)
        .output()
        .expect("run binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let out = sekf(&["bench", "--config", "missing.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let out = sekf(&["simulate", "--bogus"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--bogus") && err.contains("Usage"));
}

#[test]
fn unknown_scenario_and_bad_policy_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = sekf(&["simulate", "--scenario", "nope", "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    let out = sekf(&[
        "maintain",
        "--scenario",
        "two_timescale",
        "--policy",
        "sekf:prop:2",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_is_byte_identical_for_a_fixed_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = sekf(&[
            "simulate",
            "--scenario",
            "two_timescale",
            "--seed",
            "7",
            "--out",
            path_str(d.path()),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("dataset.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn train_then_maintain_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = path_str(dir.path());
    let cfg = sekf::harness::ExperimentConfig {
        training: sekf::training::TrainConfig {
            epochs: 50,
            ..sekf::harness::ExperimentConfig::preset("two_timescale")
                .unwrap()
                .training
        },
        ..sekf::harness::ExperimentConfig::preset("two_timescale").unwrap()
    };
    let cfg_path = dir.path().join("cfg.json");
    cfg.save(&cfg_path).unwrap();
    let out = sekf(&["train", "--config", path_str(&cfg_path), "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = dir.path().join("model.json");
    let out = sekf(&[
        "maintain",
        "--config",
        path_str(&cfg_path),
        "--model",
        path_str(&model),
        "--policy",
        "sekf:prop:0.9",
        "--out",
        d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace_sekf_prop0.9.csv")).unwrap();
    assert!(trace.starts_with("k,t,e_0,selected_count,iter_time_seconds,policy_event"));
    assert_eq!(trace.lines().count(), 801);
}

#[test]
fn non_finite_model_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mlp = sekf::Mlp::from_params(&[2, 3, 1], vec![1.7e308; 13]).unwrap();
    let model = dir.path().join("model.json");
    sekf::Model::Mlp(mlp).save(&model).unwrap();
    let out = sekf(&[
        "maintain",
        "--scenario",
        "two_timescale",
        "--model",
        path_str(&model),
        "--policy",
        "sekf:all",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_reproduces_the_stored_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = path_str(dir.path());
    let out = sekf(&[
        "bench",
        "--scenario",
        "two_timescale",
        "--policy",
        "sekf:all",
        "--out",
        d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    let out = sekf(&["report", d]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), printed);

    let rows = sekf::harness::read_summary_csv(dir.path().join("summary.csv")).unwrap();
    let json: sekf::harness::Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(rows, json.rows);
    assert_eq!(printed.lines().count(), rows.len() + 1);
    assert!(dir.path().join("report_losses.csv").exists());
}
