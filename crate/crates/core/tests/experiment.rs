use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use arfaug::csv_io::write_csv_file;
use arfaug::experiment::*;
use arfaug::learners::LearnerSpec;
use arfaug::seed;
use arfaug::{Cell, Error, Feature, Schema, Table};
use rand::Rng;
use rand_distr::StandardNormal;

const CLASSES: [&str; 3] = ["a", "b", "c"];

/// Three classes shifted along `x1`; `x2` has gaps in the primary table;
/// the auxiliary table lacks `x2`, adds `z` and has gaps in `x1`.
fn toy(n: usize, auxiliary: bool, seed_value: u64) -> Table {
    let mut rng = seed::rng(seed_value);
    let mut features = vec![
        Feature::numeric("x1"),
        Feature::categorical("c", ["u", "v", "w"]),
    ];
    features.push(if auxiliary {
        Feature::numeric("z")
    } else {
        Feature::numeric("x2")
    });
    features.push(Feature::categorical("y", CLASSES));
    let schema = Schema::new(features, Some("y".into()), None).unwrap();
    let rows: Vec<Vec<Cell>> = (0..n)
        .map(|i| {
            let class = (i % 3) as u32;
            let noise: f64 = rng.sample(StandardNormal);
            let x1 = if auxiliary && i % 7 == 0 {
                Cell::Missing
            } else {
                Cell::Number(class as f64 + noise)
            };
            let third = if !auxiliary && i % 5 == 0 {
                Cell::Missing
            } else {
                Cell::Number(rng.sample::<f64, _>(StandardNormal) + 0.5 * class as f64)
            };
            let c = Cell::Category(if rng.gen_bool(0.6) {
                class
            } else {
                rng.gen_range(0..3)
            });
            vec![x1, c, third, Cell::Category(class)]
        })
        .collect();
    Table::from_rows(schema, &rows).unwrap()
}

fn write_toy(dir: &Path) {
    write_csv_file(&toy(60, false, 1), dir.join("p.csv")).unwrap();
    write_csv_file(&toy(30, true, 2), dir.join("a.csv")).unwrap();
    fs::write(
        dir.join("p.json"),
        toy(1, false, 1).schema().to_json().unwrap(),
    )
    .unwrap();
    fs::write(
        dir.join("a.json"),
        toy(1, true, 1).schema().to_json().unwrap(),
    )
    .unwrap();
}

fn config(dir: &Path, methods: serde_json::Value, extra: serde_json::Value) -> ExperimentConfig {
    try_config(dir, methods, extra).unwrap()
}

fn try_config(
    dir: &Path,
    methods: serde_json::Value,
    extra: serde_json::Value,
) -> arfaug::Result<ExperimentConfig> {
    let mut v = serde_json::json!({
        "primary": {"path": "p.csv", "schema": "p.json"},
        "auxiliary": {"path": "a.csv", "schema": "a.json"},
        "methods": methods,
        "learners": [{"kind": "multinomial_lr"}],
        "resampling": {"k": 5, "repetitions": 2},
        "seed": 11,
        "output_dir": "out",
        "pfi": {"permutations": 2},
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    let path = dir.join("config.json");
    fs::write(&path, v.to_string()).unwrap();
    ExperimentConfig::load(&path)
}

fn mean_mode(scope: &str) -> serde_json::Value {
    serde_json::json!({"kind": "impute", "imputer": "mean_mode", "scope": scope})
}

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn toy_run_covers_every_fold_method_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([
            mean_mode("primary"),
            mean_mode("joint"),
            mean_mode("transfer")
        ]),
        serde_json::json!({}),
    );
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a.results.len(), 2 * 5 * 3);
    let csv = fs::read_to_string(dir.path().join("out").join(RESULTS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5 * 3 * 4);
    assert_eq!(
        a.summary.methods,
        vec!["MeanMode:primary", "MeanMode:joint", "MeanMode:transfer"]
    );
    assert!(a.summary.leakage_audit.violations.is_empty());
    assert_eq!(a.summary.leakage_audit.checks, 30);
    for r in &a.results {
        let m = &r.metrics;
        assert!((0.0..=1.0).contains(&m.accuracy));
        assert!((0.0..=2.0).contains(&m.brier));
        assert!(m.log_loss >= 0.0);
        assert_eq!(m.class_support.iter().sum::<usize>(), 12);
    }
    // pfi: one row per rep, fold, method and predictor; joint adds `z`
    assert_eq!(a.pfi.len(), 2 * 5 * (3 + 4 + 3));
    for f in [
        "per_class.csv",
        "pfi.csv",
        "odds_ratios.csv",
        "summary.json",
        "tables.txt",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn rerun_from_summary_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let methods = serde_json::json!([
        mean_mode("joint"),
        {"kind": "impute", "imputer": "miss_arf", "scope": "transfer"},
        {"kind": "synth", "n_synth": 20, "base": "joint"},
    ]);
    let cfg = config(
        dir.path(),
        methods,
        serde_json::json!({"learners": [{"kind": "multinomial_lr"}, {"kind": "random_forest", "n_trees": 50}], "resampling": {"k": 3, "repetitions": 1}}),
    );
    run_experiment(&cfg).unwrap();
    let out = dir.path().join("out");
    let first = read_outputs(&out);
    rerun_from_summary(out.join(SUMMARY_FILE), None).unwrap();
    assert_eq!(first, read_outputs(&out));

    // a changed dataset is refused
    write_csv_file(&toy(60, false, 99), dir.path().join("p.csv")).unwrap();
    assert!(matches!(
        rerun_from_summary(out.join(SUMMARY_FILE), None),
        Err(Error::Config(_))
    ));
}

#[test]
fn synth_of_zero_rows_matches_missarf_on_the_same_base() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let methods = serde_json::json!([
        {"kind": "impute", "imputer": "miss_arf", "scope": "joint"},
        {"kind": "synth", "n_synth": 0, "base": "joint"},
    ]);
    let cfg = config(
        dir.path(),
        methods,
        serde_json::json!({"resampling": {"k": 3, "repetitions": 1}, "pfi": {"enabled": false}}),
    );
    let a = run_experiment(&cfg).unwrap();
    let (base, synth): (Vec<_>, Vec<_>) =
        a.results.iter().partition(|r| r.method == "MissARF:joint");
    assert_eq!(base.len(), 3);
    for (b, s) in base.iter().zip(&synth) {
        assert_eq!(s.method, "Synth_0:joint");
        assert_eq!(b.metrics, s.metrics);
    }
}

#[test]
fn fold_tables_follow_the_augmentation_rules() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([mean_mode("primary")]),
        serde_json::json!({}),
    );
    let method = |v: serde_json::Value| serde_json::from_value::<AugmentationMethod>(v).unwrap();

    for fold in 0..5 {
        let joint = fold_tables(
            &cfg,
            &method(serde_json::json!({"kind": "impute", "imputer": "miss_arf", "scope": "joint"})),
            0,
            fold,
        )
        .unwrap();
        let synth = fold_tables(
            &cfg,
            &method(serde_json::json!({"kind": "synth", "n_synth": 25, "base": "joint"})),
            0,
            fold,
        )
        .unwrap();
        // auxiliary rows join every training fold; test rows are primary only
        let aux = joint
            .train_origin
            .iter()
            .filter(|o| matches!(o, Origin::Auxiliary(_)))
            .count();
        assert_eq!(aux, 30);
        assert_eq!(joint.train.n_rows(), 48 + 30);
        assert_eq!(joint.test.n_rows(), 12);
        assert!(joint
            .train_origin
            .iter()
            .all(|o| !matches!(o, Origin::Primary(i) if joint.test_rows.contains(i))));
        // synthesis appends exactly n rows to the completed base
        assert_eq!(synth.train.n_rows(), joint.train.n_rows() + 25);
        let synthetic = synth
            .train_origin
            .iter()
            .filter(|o| matches!(o, Origin::Synthetic(_)))
            .count();
        assert_eq!(synthetic, 25);
        for t in [&joint.train, &synth.train, &joint.test] {
            assert!(t.is_complete());
            assert!(t.schema().position("source").is_none());
        }
        // joint scope keeps the union of the columns
        assert!(joint.train.schema().position("z").is_some());
        assert!(joint.train.schema().position("x2").is_some());
    }

    let transfer = fold_tables(&cfg, &method(mean_mode("transfer")), 1, 2).unwrap();
    assert!(transfer.train.schema().position("z").is_none());
    assert!(fold_tables(&cfg, &method(mean_mode("primary")), 2, 0).is_err());
}

#[test]
fn global_unsafe_mode_is_flagged_by_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([mean_mode("joint")]),
        serde_json::json!({"global_unsafe": true, "resampling": {"k": 3, "repetitions": 1}, "pfi": {"enabled": false}}),
    );
    let a = run_experiment(&cfg).unwrap();
    assert!(!a.summary.leakage_audit.violations.is_empty());
    assert!(a
        .summary
        .leakage_audit
        .violations
        .iter()
        .any(|v| v.contains("test rows")));
}

#[test]
fn invalid_configurations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let synth_transfer = try_config(
        dir.path(),
        serde_json::json!([{"kind": "synth", "n_synth": 5, "base": "transfer"}]),
        serde_json::json!({}),
    );
    assert!(matches!(synth_transfer, Err(Error::Config(_))));

    let mut no_aux = config(
        dir.path(),
        serde_json::json!([mean_mode("joint")]),
        serde_json::json!({}),
    );
    no_aux.auxiliary = None;
    assert!(matches!(run_experiment(&no_aux), Err(Error::Config(_))));

    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"primary": {"path": "p.csv"}, "methods": [], "output_dir": "o", "folds": 3}"#,
    )
    .unwrap();
    assert!(matches!(
        ExperimentConfig::load(&path),
        Err(Error::Config(_))
    ));
}

#[test]
fn sweep_runs_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([]),
        serde_json::json!({
            "sweep": {"start": 10, "end": 30, "step": 10, "bases": ["primary"]},
            "resampling": {"k": 3, "repetitions": 1},
            "pfi": {"enabled": false},
        }),
    );
    let a = sweep_synth(&cfg).unwrap();
    assert_eq!(
        a.summary.methods,
        vec!["Synth_10:primary", "Synth_20:primary", "Synth_30:primary"]
    );
    let sweep = fs::read_to_string(dir.path().join("out").join(SWEEP_FILE)).unwrap();
    // header + 3 points x 1 learner x (4 metrics + 3 class accuracies)
    assert_eq!(sweep.lines().count(), 1 + 3 * 7);
}

#[test]
fn summary_tables_mark_absent_cells() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([mean_mode("primary"), mean_mode("transfer"), {"kind": "synth", "n_synth": 10, "base": "primary"}]),
        serde_json::json!({"resampling": {"k": 3, "repetitions": 2}, "pfi": {"enabled": false}}),
    );
    let a = run_experiment(&cfg).unwrap();
    let text = emit_summary_tables(&a.summary);
    let block = text
        .split("\n\n")
        .find(|b| b.starts_with("LR - accuracy"))
        .unwrap();
    let lines: Vec<&str> = block.lines().collect();
    assert!(lines[1].contains("primary") && lines[1].contains("transfer"));
    let synth = lines.iter().find(|l| l.starts_with("Synth_10")).unwrap();
    assert!(synth.trim_end().ends_with('-'));
    let mm = lines.iter().find(|l| l.starts_with("MeanMode")).unwrap();
    assert_eq!(mm.matches('(').count(), 2);
}

#[test]
fn cache_reuses_augmented_tables() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([{"kind": "synth", "n_synth": 10, "base": "joint"}]),
        serde_json::json!({"cache_dir": "cache", "resampling": {"k": 3, "repetitions": 1}, "pfi": {"enabled": false}}),
    );
    let first = run_experiment(&cfg).unwrap();
    let cached = fs::read_dir(dir.path().join("cache")).unwrap().count();
    assert_eq!(cached, 3);
    let second = run_experiment(&cfg).unwrap();
    assert_eq!(first.results, second.results);
}

#[test]
fn learner_repetition_override_caps_a_learner() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let cfg = config(
        dir.path(),
        serde_json::json!([mean_mode("primary")]),
        serde_json::json!({
            "learners": [{"kind": "multinomial_lr"}, {"kind": "random_forest", "n_trees": 20}],
            "repetitions_override": {"RF": 1},
            "pfi": {"enabled": false},
        }),
    );
    let a = run_experiment(&cfg).unwrap();
    let rf = a.results.iter().filter(|r| r.learner == "RF").count();
    let lr = a.results.iter().filter(|r| r.learner == "LR").count();
    assert_eq!((lr, rf), (10, 5));
}

#[test]
fn example_config_describes_the_full_grid() {
    let cfg = example_config();
    assert_eq!(cfg.methods.len(), 10);
    assert_eq!(cfg.learners, vec![LearnerSpec::lr(), LearnerSpec::rf()]);
    assert_eq!((cfg.resampling.k, cfg.resampling.repetitions), (5, 100));
    cfg.validate().unwrap();
}
