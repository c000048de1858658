//! End-to-end runs of the `wate` binary: report contents, exit codes, and
//! byte-level determinism of the written files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wate() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wate"))
}

fn run(args: &[&str]) -> Output {
    wate().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("missing {}: {e}", dir.join(name).display()))
}

#[test]
fn estimate_reproduces_the_two_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate",
        "--data",
        fixture("two_row.csv").to_str().unwrap(),
        "--estimand",
        "ate",
        "--method",
        "naive1",
        "--method",
        "naive2",
        "--method",
        "eif",
        "--learner-ps",
        "oracle:e",
        "--learner-outcome",
        "oracle:mu0",
        "--learner-outcome",
        "oracle:mu1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = read(dir.path(), "estimates.csv");
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][0..4], ["estimand", "method", "gamma_hat", "se"]);
    assert_eq!(rows[1][1..3], ["naive1", "1"]);
    assert_eq!(rows[2][1..3], ["naive2", "2"]);
    assert_eq!(rows[3][1..4], ["eif", "2", "0.707107"]);

    let report: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "estimates.json")).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["seed"], 0);
    assert!(report["version"].as_str().unwrap().contains('.'));
    assert_eq!(report["config_digest"].as_str().unwrap().len(), 64);
    assert_eq!(report["config"]["learner_ps"], "oracle:e");
    let eif = &report["report"][2];
    assert_eq!(eif["method"], "eif");
    assert!((eif["gamma_hat"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((eif["se"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);

    // The sidecar record carries the same digest as the report envelope.
    let record: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "run_config.json")).unwrap();
    assert_eq!(record["config_digest"], report["config_digest"]);
}

#[test]
fn unknown_estimand_exits_2_naming_choices() {
    let out = run(&[
        "estimate",
        "--data",
        fixture("two_row.csv").to_str().unwrap(),
        "--estimand",
        "atq",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("valid choices"), "{err}");
    assert!(err.contains("ato"), "{err}");
}

#[test]
fn single_arm_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one_arm.csv");
    std::fs::write(&path, "a,y,x1\n1,1.0,0.1\n1,2.0,0.2\n1,3.0,0.3\n").unwrap();
    let out = run(&[
        "estimate",
        "--data",
        path.to_str().unwrap(),
        "--estimand",
        "ate",
        "--method",
        "eif",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("control arm empty"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn missing_file_exits_3_naming_the_path() {
    let out = run(&["estimate", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("/nonexistent/data.csv"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn balance_tolerates_missing_outcome_and_zeroes_identical_arms() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mirrored.csv");
    // Same covariate values in both arms, no outcome column at all.
    let mut csv = String::from("a,x1\n");
    for v in [1.0, 2.0, 3.0, 4.0, 5.0] {
        csv.push_str(&format!("1,{v}\n0,{v}\n"));
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(&[
        "balance",
        "--data",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--bins",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let love = read(dir.path(), "love_plot.csv");
    for line in love.lines().skip(1) {
        let asmd: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(asmd.abs() < 1e-10, "{line}");
    }

    let overlap: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "balance.json")).unwrap();
    let treated = &overlap["report"]["overlap"]["treated"];
    assert_eq!(treated["n"], 5);
    let counts: Vec<u64> = treated["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<u64>(), 5);
}

#[test]
fn simulate_outputs_are_identical_across_runs_and_worker_counts() {
    let args = |dir: &Path| {
        vec![
            "simulate".to_string(),
            "--dgp".into(),
            "dgp5".into(),
            "--estimand".into(),
            "ate".into(),
            "--method".into(),
            "eif".into(),
            "--method".into(),
            "dml2".into(),
            "--n".into(),
            "80".into(),
            "--reps".into(),
            "4".into(),
            "--splits".into(),
            "2".into(),
            "--k-folds".into(),
            "4".into(),
            "--gamma0".into(),
            "0".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            dir.to_str().unwrap().into(),
        ]
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out1 = wate()
        .args(args(d1.path()))
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .unwrap();
    let out2 = wate()
        .args(args(d2.path()))
        .env("RAYON_NUM_THREADS", "4")
        .output()
        .unwrap();
    assert!(out1.status.success(), "{}", stderr(&out1));
    assert!(out2.status.success(), "{}", stderr(&out2));
    assert_eq!(
        read(d1.path(), "metrics.csv"),
        read(d2.path(), "metrics.csv")
    );
    assert_eq!(
        read(d1.path(), "metrics.json"),
        read(d2.path(), "metrics.json")
    );
}

#[test]
fn truth_on_a_null_process_is_exactly_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "truth",
        "--dgp",
        "dgp5",
        "--estimand",
        "ate",
        "--estimand",
        "ato",
        "--n",
        "500",
        "--reps",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = read(dir.path(), "truth.csv");
    let mut lines = csv.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "ATE,0,0,500,2");
    assert_eq!(lines.next().unwrap(), "ATO,0,0,500,2");
    assert!(!dir.path().join("truth.json").exists());
}

#[test]
fn format_flag_selects_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate",
        "--data",
        fixture("two_row.csv").to_str().unwrap(),
        "--estimand",
        "ate",
        "--method",
        "naive1",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("estimates.json").exists());
    assert!(dir.path().join("run_config.json").exists());
    assert!(!dir.path().join("estimates.csv").exists());
}

#[test]
fn invalid_dgp_name_exits_2() {
    let out = run(&["simulate", "--dgp", "dgp9", "--gamma0", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("through 5"), "{}", stderr(&out));
}
