use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_car-heavytail"));
    c.env_remove("CAR_THREADS");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A two-stratum dataset with a unit shift between arms.
fn write_trial(path: &Path, n: usize) {
    let mut text = String::from("outcome,treatment,stratum\n");
    for i in 0..n {
        let arm = i % 2;
        let base = ((i * 7919) % 1000) as f64 / 100.0 - 5.0;
        let stratum = if i % 4 < 2 { "F<35" } else { "F>=35" };
        text.push_str(&format!("{},{arm},{stratum}\n", base + arm as f64));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn assign_appends_treatment_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    let mut text = String::from("id,stratum,cov_sex,cov_age\n");
    for i in 0..40 {
        text.push_str(&format!("{i},s{},{},{}\n", i % 3, i % 2, (i / 2) % 2));
    }
    fs::write(&input, text).unwrap();
    let schemes: [(&str, &[&str]); 4] = [
        ("sr", &[]),
        ("str", &["--block-size", "4"]),
        ("bcd", &["--coin-p", "0.85"]),
        ("min", &["--coin-p", "0.85", "--weights", "0.5,0.5"]),
    ];
    for (scheme, extra) in schemes {
        let out_path = dir.path().join(format!("{scheme}.csv"));
        let out = run(bin()
            .args(["assign", "--scheme", scheme, "--seed", "3"])
            .args(extra)
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&out_path));
        assert_eq!(
            code(&out),
            0,
            "{scheme}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let written = fs::read_to_string(&out_path).unwrap();
        let mut lines = written.lines();
        assert_eq!(
            lines.next().unwrap(),
            "id,stratum,cov_sex,cov_age,treatment"
        );
        assert_eq!(
            lines
                .filter(|l| l.ends_with(",0") || l.ends_with(",1"))
                .count(),
            40
        );
    }
}

#[test]
fn assign_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    let mut text = String::from("stratum\n");
    for i in 0..50 {
        text.push_str(&format!("{}\n", i % 2));
    }
    fs::write(&input, text).unwrap();
    let once = || {
        run(bin()
            .args(["assign", "--scheme", "sr", "--seed", "11", "--input"])
            .arg(&input))
        .stdout
    };
    assert_eq!(once(), once());
}

#[test]
fn assign_requires_scheme_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("units.csv");
    fs::write(&input, "stratum\na\nb\n").unwrap();
    let out = run(bin()
        .args(["assign", "--scheme", "str", "--input"])
        .arg(&input));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("block_size"));
}

#[test]
fn analyze_reports_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("trial.csv");
    write_trial(&data, 400);
    let out = run(bin().arg("analyze").arg("--data").arg(&data));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("estimator,tau_hat,se,ci_lo,ci_hi,length\n"));
    assert!(text.lines().any(|l| l.starts_with("str,")));

    let json = dir.path().join("out.json");
    let out = run(bin()
        .args(["analyze", "--format", "json", "--seed", "4", "--data"])
        .arg(&data)
        .arg("--output")
        .arg(&json));
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kind"], "analysis");
    assert!(v["payload"]["reports"].as_array().unwrap().len() >= 6);
}

#[test]
fn analyze_under_minimization_refuses_tdim_variance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("trial.csv");
    write_trial(&data, 200);
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"estimators": [{"kind": "tdim"}, {"kind": "str"}],
            "design": {"scheme": "min", "pi": 0.5, "coin_p": 0.85, "weights": [1.0]}}"#,
    )
    .unwrap();
    let out = run(bin()
        .args(["analyze", "--format", "json", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg));
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let tdim = &v["payload"]["reports"][0];
    assert!(tdim["se"].is_null());
    assert!(tdim["note"]
        .as_str()
        .unwrap()
        .contains("not universally applicable under minimization"));
    assert!(v["payload"]["reports"][1]["se"].is_number());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "outcome,treatment,stratum\n1,0,a\n2,2,a\n").unwrap();
    let out = run(bin().arg("analyze").arg("--data").arg(&bad));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));

    let out = run(bin()
        .arg("analyze")
        .arg("--data")
        .arg(dir.path().join("missing.csv")));
    assert_eq!(code(&out), 2);

    let data = dir.path().join("trial.csv");
    write_trial(&data, 100);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"alhpa": 0.1}"#).unwrap();
    let out = run(bin()
        .arg("analyze")
        .arg("--data")
        .arg(&data)
        .arg("--config")
        .arg(&cfg));
    assert_eq!(code(&out), 2);
}

#[test]
fn estimation_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.csv");
    // Too few controls to fit a score model.
    fs::write(
        &data,
        "outcome,treatment,stratum\n1,0,a\n2,1,a\n3,0,a\n4,1,a\n",
    )
    .unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"estimators": [{"kind": "tdim"}]}"#).unwrap();
    let out = run(bin()
        .arg("analyze")
        .arg("--data")
        .arg(&data)
        .arg("--config")
        .arg(&cfg));
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

fn grid_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("grid.json");
    fs::write(
        &cfg,
        r#"{"model_id": 1, "n": 200, "pi": 0.5, "tails": ["cauchy"],
            "designs": [{"scheme": "sr", "pi": 0.5}, {"scheme": "str", "pi": 0.5, "block_size": 4}],
            "reps": 6, "seed": 8}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn simulate_is_identical_across_thread_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path());
    let seq = run(bin()
        .args(["simulate", "--sequential", "--config"])
        .arg(&cfg));
    assert_eq!(code(&seq), 0, "{}", String::from_utf8_lossy(&seq.stderr));
    let par = run(bin()
        .args(["simulate", "--threads", "2", "--config"])
        .arg(&cfg));
    assert_eq!(code(&par), 0);
    let env = run(bin()
        .env("CAR_THREADS", "1")
        .args(["simulate", "--threads", "3", "--config"])
        .arg(&cfg));
    assert_eq!(code(&env), 0);
    assert_eq!(seq.stdout, par.stdout);
    assert_eq!(seq.stdout, env.stdout);
    let text = String::from_utf8(seq.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 6);
}

#[test]
fn car_threads_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path());
    let out = run(bin()
        .env("CAR_THREADS", "many")
        .args(["simulate", "--threads", "2", "--config"])
        .arg(&cfg));
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("CAR_THREADS"));
}

#[test]
fn simulate_seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path());
    let a = run(bin()
        .args(["simulate", "--reps", "3", "--seed", "1", "--config"])
        .arg(&cfg));
    let b = run(bin()
        .args(["simulate", "--reps", "3", "--seed", "2", "--config"])
        .arg(&cfg));
    assert_eq!(code(&a), 0);
    assert_ne!(a.stdout, b.stdout);
}
