use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs")
}

fn space_file() -> PathBuf {
    configs().join("promotion_space.toml")
}

fn factorlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factorlab"))
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn reproduction_matches_the_bundled_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = factorlab(dir.path(), &["--format", "structured", "reproduce-paper"]);
    assert_ok(&o);
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let result = &doc["result"];
    assert_eq!(result["order_identical"], true);
    assert!(result["max_abs_diff"].as_f64().unwrap() <= 5e-4);
    assert_eq!(result["policy_predictions"].as_array().unwrap().len(), 24);
    assert_eq!(result["segment_table"].as_array().unwrap().len(), 6);
    assert_eq!(result["velocity"]["sum_levels"], 9);
}

#[test]
fn power_reports_velocity_of_the_promotion_space() {
    let dir = tempfile::tempdir().unwrap();
    let space = space_file();
    let o = factorlab(dir.path(), &["power", "--space", space.to_str().unwrap(), "--sigma", "2", "--mde", "0.1"]);
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.contains("sum of levels        9"), "{text}");
    assert!(text.contains("product of levels    24"), "{text}");
    assert!(text.contains("sample size ratio    0.3750"), "{text}");
}

#[test]
fn missing_input_exits_with_usage_code_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = factorlab(dir.path(), &["--out", "design.toml", "design", "--space", "no_such_space.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_space.toml"), "{}", stderr(&o));
    assert!(entries(dir.path()).is_empty(), "{:?}", entries(dir.path()));
}

#[test]
fn malformed_units_cell_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let space = space_file();
    assert_ok(&factorlab(dir.path(), &["--out", "d.toml", "design", "--space", space.to_str().unwrap()]));
    std::fs::write(dir.path().join("units.csv"), "unit_id,spend\na,1.5\nb,oops\n").unwrap();
    let o = factorlab(dir.path(), &["--out", "assigned.csv", "assign", "--design", "d.toml", "--units", "units.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("row 3") && err.contains("`spend`"), "{err}");
    assert!(!dir.path().join("assigned.csv").exists());
}

#[test]
fn duplicate_unit_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let space = space_file();
    assert_ok(&factorlab(dir.path(), &["--out", "d.toml", "design", "--space", space.to_str().unwrap()]));
    std::fs::write(dir.path().join("units.csv"), "unit_id,spend\na,1\na,2\n").unwrap();
    let o = factorlab(dir.path(), &["assign", "--design", "d.toml", "--units", "units.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let space = space_file();
    let args = [
        "--format", "structured", "--seed", "5", "design", "--space", space.to_str().unwrap(), "--kind", "mixed",
        "--runs", "12", "--holdout",
    ];
    let first = factorlab(dir.path(), &args);
    let second = factorlab(dir.path(), &args);
    assert_ok(&first);
    assert_eq!(first.stdout, second.stdout);
    let other = factorlab(dir.path(), &{
        let mut a = args;
        a[3] = "6";
        a
    });
    assert_ok(&other);
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn artifact_gets_a_manifest_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let space = space_file();
    let o = factorlab(dir.path(), &["--seed", "3", "--out", "d.toml", "design", "--space", space.to_str().unwrap()]);
    assert_ok(&o);
    assert_eq!(entries(dir.path()), ["d.toml", "d.toml.manifest.json"]);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.toml.manifest.json")).unwrap()).unwrap();
    let m = &manifest["manifest"];
    assert_eq!(m["command"], "design");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["timestamp"], 1_700_000_000u64);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn design_to_policy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let space = space_file();
    let config = configs().join("paper_analogue.toml");
    let d = dir.path();
    assert_ok(&factorlab(
        d,
        &["--seed", "7", "--out", "d.toml", "design", "--space", space.to_str().unwrap(), "--kind", "mixed", "--runs", "12", "--holdout"],
    ));
    assert_ok(&factorlab(
        d,
        &["--out", "sim.csv", "simulate", "--config", config.to_str().unwrap(), "--design", "d.toml", "--units", "20000"],
    ));
    let covs = ["--design", "d.toml", "--data", "sim.csv", "--covariates", "avg_order_spend"];

    let fit = factorlab(d, &[&["--format", "structured", "fit"][..], &covs, &["--coefficients-out", "coef.toml"]].concat());
    assert_ok(&fit);
    let fitted: Value = serde_json::from_str(&stdout(&fit)).unwrap();
    assert_eq!(fitted["result"]["joint_tests"][0]["reject"], true);
    assert!(d.join("coef.toml").exists());

    let table = factorlab(
        d,
        &["--format", "structured", "optimize", "--mode", "table", "--coefficients", "coef.toml", "--space", space.to_str().unwrap()],
    );
    assert_ok(&table);
    let rows = serde_json::from_str::<Value>(&stdout(&table)).unwrap()["result"]["rows"].as_array().unwrap().clone();
    assert!(rows.len() >= 2);
    assert_eq!(rows[0]["lo"], 0);
    assert_eq!(rows.last().unwrap()["hi"], 100);

    // the same model refitted in-process gives the same personalized choice
    let from_file = factorlab(
        d,
        &["optimize", "--mode", "personalized", "--coefficients", "coef.toml", "--space", space.to_str().unwrap(), "--x", "30"],
    );
    let refit = factorlab(d, &[&["optimize", "--mode", "personalized"][..], &covs, &["--x", "30"]].concat());
    assert_ok(&from_file);
    assert_ok(&refit);
    let choice = |o: &Output| stdout(o).lines().next().unwrap().to_string();
    assert_eq!(choice(&from_file), choice(&refit));

    let validate = factorlab(d, &[&["--format", "structured", "validate"][..], &covs, &["--groups", "5"]].concat());
    assert_ok(&validate);
    let v: Value = serde_json::from_str(&stdout(&validate)).unwrap();
    assert!(v["result"]["p_value"].as_f64().unwrap() > 0.0);
    assert_eq!(v["result"]["segments"]["groups"], 5);

    let erupt = factorlab(d, &[&["erupt"][..], &covs].concat());
    assert_ok(&erupt);
    assert!(stdout(&erupt).contains("ERUPT"));
}

#[test]
fn nearest_neighbour_estimates_with_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let space = space_file();
    let config = configs().join("paper_analogue.toml");
    assert_ok(&factorlab(d, &["--out", "d.toml", "design", "--space", space.to_str().unwrap()]));
    assert_ok(&factorlab(
        d,
        &["--out", "sim.csv", "simulate", "--config", config.to_str().unwrap(), "--design", "d.toml", "--units", "6000"],
    ));
    let o = factorlab(
        d,
        &[
            "--format", "structured", "cate", "--design", "d.toml", "--data", "sim.csv", "--covariates", "avg_order_spend",
            "--a", "Upfront,Level3,Ongoing,Generic", "--b", "Spread,Level1,Ongoing,Generic", "--at", "10", "--at", "60",
            "--grid", "10,50",
        ],
    );
    assert_ok(&o);
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let k = doc["result"]["k"].as_u64().unwrap();
    assert!(k == 10 || k == 50);
    assert_eq!(doc["result"]["estimates"].as_array().unwrap().len(), 2);
}

#[test]
fn conflicting_knn_options_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = factorlab(
        dir.path(),
        &["cate", "--design", "d.toml", "--data", "x.csv", "--a", "x", "--b", "y", "--at", "1", "--k", "3", "--grid", "1,2"],
    );
    assert_eq!(o.status.code(), Some(2));
}
