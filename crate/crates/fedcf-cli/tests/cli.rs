//! End-to-end contract tests for the `fedcf` binary: outputs, messages,
//! and the exit-code discipline (0 ok, 2 config/input, 3 pipeline).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shipped_config() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    fs::read_to_string(path).unwrap()
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcf"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_exits_2_naming_path() {
    let out = Command::new(env!("CARGO_BIN_EXE_fedcf"))
        .args(["--config", "/no/such/file.toml", "simulate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/file.toml"), "stderr: {err}");
}

#[test]
fn two_scenario_config_exits_2_naming_the_missing_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = shipped_config();
    let third = text
        .find("[[experiment1.scenarios]]\nid = \"vehicle-3\"")
        .unwrap();
    let after = text[third..].find("[experiment1.test_profile]").unwrap();
    text.replace_range(third..third + after, "");
    let config = write_config(dir.path(), &text);

    let out = run(&config, dir.path(), &["experiment", "--which", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("scenario 3 is missing"),
        "stderr does not name the missing scenario: {err}"
    );
}

#[test]
fn simulate_writes_the_expected_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &shipped_config());
    let out = run(&config, dir.path(), &["simulate"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let csv = fs::read_to_string(dir.path().join("sim_aggressive.csv")).unwrap();
    let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 197);
}

#[test]
fn constant_leader_keeps_follower_at_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped_config().replace(
        "[simulate.leader]\nbase_speed = 15.0\ndip_speed = 10.0",
        "[simulate.leader]\nbase_speed = 15.0\ndip_speed = 15.0",
    );
    assert!(text.contains("dip_speed = 15.0"));
    let config = write_config(dir.path(), &text);
    let out = run(
        &config,
        dir.path(),
        &["simulate", "--controller", "passive"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let csv = fs::read_to_string(dir.path().join("sim_passive.csv")).unwrap();
    for line in csv.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        let leader: f64 = fields[1].parse().unwrap();
        let follower: f64 = fields[2].parse().unwrap();
        assert!((follower - leader).abs() < 1e-9, "line: {line}");
    }
}

#[test]
fn train_federated_emits_one_history_entry_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &shipped_config());
    let out = run(&config, dir.path(), &["train", "--mode", "federated"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let v: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("params_federated.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["history"]["rounds"].as_array().unwrap().len(), 20);
    assert!(v["global"]["sigma0"].as_f64().unwrap() > 0.0);
}

#[test]
// The anchor literal carries more digits than its double can distinguish;
// the assertion is that the pipeline keeps the parsed value bit for bit.
#[allow(clippy::excessive_precision)]
fn personalize_with_zero_steps_returns_anchor_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped_config().replace("steps = 250", "steps = 0");
    let config = write_config(dir.path(), &text);

    let anchor = dir.path().join("anchor.json");
    fs::write(
        &anchor,
        r#"{"sigma0":3.1,"length_scale":0.7,"sigma_eps":0.123456789012345678}"#,
    )
    .unwrap();

    let out = run(
        &config,
        dir.path(),
        &[
            "train",
            "--mode",
            "personalize",
            "--anchor",
            anchor.to_str().unwrap(),
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let rows: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("params_personalize.json")).unwrap(),
    )
    .unwrap();
    for row in rows.as_array().unwrap() {
        assert_eq!(row["params"]["sigma0"].as_f64().unwrap(), 3.1);
        assert_eq!(row["params"]["length_scale"].as_f64().unwrap(), 0.7);
        assert_eq!(
            row["params"]["sigma_eps"].as_f64().unwrap(),
            0.123456789012345678f64
        );
    }
}

#[test]
fn personalize_without_anchor_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &shipped_config());
    let out = run(&config, dir.path(), &["train", "--mode", "personalize"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--anchor"));
}

#[test]
fn diverging_training_exits_3_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = shipped_config().replace("learning_rate = 0.08", "learning_rate = 1e9");
    let config = write_config(dir.path(), &text);
    let out = run(&config, dir.path(), &["train", "--mode", "local"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage train-local"), "stderr: {err}");
}

#[test]
fn seed_override_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &shipped_config());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let run_seed = |out: &Path, seed: &str| {
        let st = Command::new(env!("CARGO_BIN_EXE_fedcf"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed, "experiment", "--which", "2"])
            .status()
            .unwrap();
        assert!(st.success());
        fs::read(out.join("report_experiment2.json")).unwrap()
    };
    let a = run_seed(&out_a, "42");
    let b = run_seed(&out_b, "43");
    assert_ne!(a, b, "different seeds must change the report");
}
