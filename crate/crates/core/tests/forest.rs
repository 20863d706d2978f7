mod common;

use std::collections::HashSet;

use arfaug::forest::{fit_classifier, Forest, ForestParams, Leaf, Node, NodeKind, SplitRule, Tree};
use arfaug::seed;
use arfaug::{Cell, Feature, Schema, Table};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn leaf(counts: &[u32]) -> NodeKind {
    NodeKind::Leaf(Leaf {
        class_counts: counts.to_vec(),
        rows: Vec::new(),
    })
}

fn stump(threshold: f64, left: &[u32], right: &[u32]) -> Tree {
    Tree {
        nodes: vec![
            Node {
                parent: None,
                kind: NodeKind::Internal {
                    rule: SplitRule::Numeric {
                        feature: 0,
                        threshold,
                    },
                    left: 1,
                    right: 2,
                },
            },
            Node {
                parent: Some(0),
                kind: leaf(left),
            },
            Node {
                parent: Some(0),
                kind: leaf(right),
            },
        ],
    }
}

fn single(counts: &[u32]) -> Tree {
    Tree {
        nodes: vec![Node {
            parent: None,
            kind: leaf(counts),
        }],
    }
}

fn x_table(xs: &[f64]) -> Table {
    let schema = Schema::from_features(vec![Feature::numeric("x")]).unwrap();
    Table::new(schema, vec![xs.iter().map(|&x| Cell::Number(x)).collect()]).unwrap()
}

fn classes() -> Vec<String> {
    vec!["no".into(), "yes".into()]
}

#[test]
fn hand_built_forest_averages_leaf_proportions() {
    let forest = Forest::from_trees(
        vec![Feature::numeric("x")],
        classes(),
        vec![stump(0.0, &[3, 1], &[0, 2]), single(&[1, 1])],
    )
    .unwrap();
    let p = forest.predict_proba(&x_table(&[-1.0, 0.0, 1.0])).unwrap();
    // x = -1 and x = 0 go left (x <= 0): (3/4 + 1/2) / 2 and (1/4 + 1/2) / 2
    assert_eq!(p.row(0), &[0.625, 0.375]);
    assert_eq!(p.row(1), &[0.625, 0.375]);
    assert_eq!(p.row(2), &[0.25, 0.75]);
    assert_eq!(
        forest.leaf_assignments(&x_table(&[-1.0, 1.0])).unwrap(),
        vec![vec![1, 2], vec![0, 0]]
    );
}

#[test]
fn opposing_pure_trees_split_the_vote() {
    let forest = Forest::from_trees(
        vec![Feature::numeric("x")],
        classes(),
        vec![single(&[4, 0]), single(&[0, 7])],
    )
    .unwrap();
    let p = forest.predict_proba(&x_table(&[0.3])).unwrap();
    assert_eq!(p.row(0), &[0.5, 0.5]);
}

fn blobs(n: usize, margin: f64, seed_value: u64) -> Table {
    let mut rng = seed::rng(seed_value);
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let class = (i % 2) as u32;
        let shift = margin * class as f64;
        x1.push(Cell::Number(shift + rng.sample::<f64, _>(StandardNormal)));
        x2.push(Cell::Number(shift + rng.sample::<f64, _>(StandardNormal)));
        y.push(Cell::Category(class));
    }
    let schema = Schema::new(
        vec![
            Feature::numeric("x1"),
            Feature::numeric("x2"),
            Feature::categorical("y", ["a", "b"]),
        ],
        Some("y".into()),
        None,
    )
    .unwrap();
    Table::new(schema, vec![x1, x2, y]).unwrap()
}

#[test]
fn separable_blobs_have_high_oob_accuracy() {
    let t = blobs(200, 6.0, 11);
    let f = fit_classifier(&t, "y", &ForestParams::learner(), 3).unwrap();
    let oob = f.oob_accuracy();
    assert!(oob.accuracy >= 0.95, "{oob:?}");
    assert_eq!(oob.n_evaluated + oob.n_uncovered, 200);
}

#[test]
fn coin_flip_labels_have_chance_oob_accuracy() {
    let mut rng = seed::rng(19);
    let n = 500;
    let x: Vec<Cell> = (0..n)
        .map(|_| Cell::Number(rng.sample(StandardNormal)))
        .collect();
    let z: Vec<Cell> = (0..n)
        .map(|_| Cell::Category(rng.gen_range(0..3)))
        .collect();
    let y: Vec<Cell> = (0..n)
        .map(|_| Cell::Category(rng.gen_range(0..2)))
        .collect();
    let schema = Schema::new(
        vec![
            Feature::numeric("x"),
            Feature::categorical("z", ["p", "q", "r"]),
            Feature::categorical("y", ["a", "b"]),
        ],
        Some("y".into()),
        None,
    )
    .unwrap();
    let t = Table::new(schema, vec![x, z, y]).unwrap();
    let acc = fit_classifier(&t, "y", &ForestParams::learner(), 5)
        .unwrap()
        .oob_accuracy()
        .accuracy;
    assert!((acc - 0.5).abs() <= 0.07, "{acc}");
}

#[test]
fn refit_with_same_seed_is_bit_identical() {
    let t = blobs(120, 1.0, 2);
    let params = ForestParams {
        n_trees: 50,
        ..ForestParams::learner()
    };
    let a = fit_classifier(&t, "y", &params, 9).unwrap();
    let b = fit_classifier(&t, "y", &params, 9).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = fit_classifier(&t, "y", &params, 10).unwrap();
    assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    let back = Forest::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(
        back.predict_proba(&t).unwrap(),
        a.predict_proba(&t).unwrap()
    );
}

#[test]
fn unknown_level_at_prediction_goes_right() {
    let tree = Tree {
        nodes: vec![
            Node {
                parent: None,
                kind: NodeKind::Internal {
                    rule: SplitRule::Categorical {
                        feature: 0,
                        left_levels: vec![0],
                    },
                    left: 1,
                    right: 2,
                },
            },
            Node {
                parent: Some(0),
                kind: leaf(&[1, 0]),
            },
            Node {
                parent: Some(0),
                kind: leaf(&[0, 1]),
            },
        ],
    };
    let forest = Forest::from_trees(
        vec![Feature::categorical("c", ["u", "v"])],
        classes(),
        vec![tree],
    )
    .unwrap();
    let schema = Schema::from_features(vec![Feature::categorical("c", ["u", "w"])]).unwrap();
    let t = Table::new(schema, vec![vec![Cell::Category(0), Cell::Category(1)]]).unwrap();
    let p = forest.predict_proba(&t).unwrap();
    assert_eq!(p.row(0), &[1.0, 0.0]);
    assert_eq!(p.row(1), &[0.0, 1.0]);
}

fn mixed_table(rows: &[(f64, u32, u32)]) -> Table {
    let schema = Schema::new(
        vec![
            Feature::numeric("x"),
            Feature::categorical("c", ["a", "b", "c", "d"]),
            Feature::categorical("y", ["n", "p", "q"]),
        ],
        Some("y".into()),
        None,
    )
    .unwrap();
    let cols = vec![
        rows.iter().map(|r| Cell::Number(r.0)).collect(),
        rows.iter().map(|r| Cell::Category(r.1)).collect(),
        rows.iter().map(|r| Cell::Category(r.2)).collect(),
    ];
    Table::new(schema, cols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn leaves_partition_rows_within_their_bounds(
        rows in prop::collection::vec((-5.0f64..5.0, 0u32..4, 0u32..3), 8..60),
        seed_value in any::<u64>(),
        min_node in 1usize..4,
    ) {
        let t = mixed_table(&rows);
        let params = ForestParams { n_trees: 8, mtry: Some(2), min_node_size: min_node, bootstrap: true };
        let f = fit_classifier(&t, "y", &params, seed_value).unwrap();
        let encoded = f.encode(&t).unwrap();
        for tree in &f.trees {
            let mut seen = HashSet::new();
            for id in tree.leaf_ids() {
                let leaf = tree.leaf(id).unwrap();
                prop_assert!(leaf.coverage() > 0);
                for &r in &leaf.rows {
                    prop_assert!(seen.insert(r), "row {} in two leaves", r);
                    prop_assert_eq!(tree.route(|j| encoded.get(r as usize, j)).unwrap(), id);
                    prop_assert!(tree.bounds(id, 2)[0].contains(encoded.get(r as usize, 0)));
                    let allowed = tree.allowed_levels(id, 1, 4);
                    prop_assert!(allowed[encoded.get(r as usize, 1) as usize]);
                }
            }
        }
        let p = f.predict_proba(&t).unwrap();
        for i in 0..p.n_rows() {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
