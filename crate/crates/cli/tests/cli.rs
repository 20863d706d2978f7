use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn arfaug(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arfaug"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = arfaug(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) {
    let path = dir.join("experiment.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["methods"] = serde_json::json!([
        {"kind": "impute", "imputer": "mean_mode", "scope": "primary"},
        {"kind": "impute", "imputer": "mean_mode", "scope": "joint"},
    ]);
    v["learners"] = serde_json::json!([{"kind": "multinomial_lr"}]);
    v["resampling"] = serde_json::json!({"k": 3, "repetitions": 1, "stratified": true});
    v["pfi"]["permutations"] = serde_json::json!(1);
    fs::write(path, v.to_string()).unwrap();
}

#[test]
fn example_experiment_report_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["example-data", "--dir", "."]);
    for f in [
        "primary.csv",
        "auxiliary.csv",
        "primary.schema.json",
        "auxiliary.schema.json",
        "experiment.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    small_config(d);
    let out = ok(
        d,
        &["experiment", "--config", "experiment.json", "--seed", "3"],
    );
    assert!(out.contains("6 fold results"), "{out}");
    assert!(out.contains("0 violations"), "{out}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("results/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 3);

    let report = ok(d, &["report", "results"]);
    assert!(report.contains("LR - accuracy"));
    assert!(report.contains("MeanMode"));
    let pfi = ok(
        d,
        &[
            "pfi",
            "results/summary.json",
            "--top",
            "3",
            "--method",
            "MeanMode:joint",
        ],
    );
    assert_eq!(pfi.lines().count(), 4, "{pfi}");

    let before = fs::read(d.join("results/results.csv")).unwrap();
    ok(
        d,
        &[
            "experiment",
            "--from-summary",
            "results/summary.json",
            "--output-dir",
            "again",
        ],
    );
    assert_eq!(before, fs::read(d.join("again/results.csv")).unwrap());
}

#[test]
fn combine_impute_and_synth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["example-data", "--dir", "."]);
    ok(
        d,
        &[
            "combine",
            "--table",
            "primary.csv",
            "--table",
            "auxiliary.csv",
            "--schema",
            "primary.schema.json",
            "--schema",
            "auxiliary.schema.json",
            "--imputer",
            "meanmode",
            "--output",
            "combined.csv",
        ],
    );
    let combined = fs::read_to_string(d.join("combined.csv")).unwrap();
    assert_eq!(combined.lines().count(), 1 + 169 + 82);
    assert!(combined.lines().next().unwrap().ends_with(",source"));
    assert!(!combined.contains(",,"));

    ok(
        d,
        &[
            "impute",
            "fit",
            "--input",
            "primary.csv",
            "--imputer",
            "meanmode",
            "--model",
            "mm.json",
        ],
    );
    ok(
        d,
        &[
            "impute",
            "apply",
            "--input",
            "primary.csv",
            "--model",
            "mm.json",
            "--output",
            "filled.csv",
        ],
    );
    let filled = fs::read_to_string(d.join("filled.csv")).unwrap();
    assert_eq!(filled.lines().count(), 170);
    assert!(!filled.contains(",,") && !filled.lines().any(|l| l.ends_with(',')));

    let out = ok(
        d,
        &[
            "synth",
            "--input",
            "combined.csv",
            "--n",
            "40",
            "--output",
            "synthetic.csv",
            "--model",
            "arf.json",
        ],
    );
    assert!(out.contains("iterations"));
    assert_eq!(
        fs::read_to_string(d.join("synthetic.csv"))
            .unwrap()
            .lines()
            .count(),
        41
    );
    ok(
        d,
        &[
            "synth",
            "--from-model",
            "arf.json",
            "--n",
            "5",
            "--seed",
            "2",
            "--output",
            "more.csv",
        ],
    );
    assert_eq!(
        fs::read_to_string(d.join("more.csv"))
            .unwrap()
            .lines()
            .count(),
        6
    );
}

#[test]
fn bad_configuration_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.json"),
        r#"{"primary": {"path": "p.csv"}, "methods": [], "output_dir": "o", "colour": 1}"#,
    )
    .unwrap();
    let out = arfaug(d, &["experiment", "--config", "c.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}
