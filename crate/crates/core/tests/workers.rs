// Own test binary: mutates the process environment.

use arfaug::cohort::{discharge_cohort, write_cohort};
use arfaug::experiment::*;
use arfaug::Error;

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    write_cohort(&discharge_cohort(5).unwrap(), dir.path()).unwrap();
    let mut cfg = example_config();
    cfg.resolve_paths(dir.path());
    cfg.methods = full_grid()
        .into_iter()
        .filter(|m| m.family() == "MeanMode")
        .collect();
    cfg.resampling.repetitions = 1;
    cfg.pfi.permutations = 2;
    cfg.learners = vec![arfaug::learners::LearnerSpec::RandomForest(
        arfaug::forest::ForestParams {
            n_trees: 30,
            ..Default::default()
        },
    )];

    std::env::set_var(WORKERS_ENV, "1");
    let one = run_experiment(&cfg).unwrap();
    std::env::set_var(WORKERS_ENV, "3");
    let three = run_experiment(&cfg).unwrap();
    assert_eq!(one.results, three.results);
    assert_eq!(one.pfi, three.pfi);

    std::env::set_var(WORKERS_ENV, "many");
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    std::env::remove_var(WORKERS_ENV);
}
