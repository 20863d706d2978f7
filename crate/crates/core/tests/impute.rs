mod common;

use arfaug::impute::{
    comimp_combine, fit_meanmode, fit_missarf, ComImpMode, ComImpPlan, ImputerSpec, MissArfParams,
};
use arfaug::seed;
use arfaug::{Cell, Feature, Schema, Table};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn num(xs: &[Option<f64>]) -> Vec<Cell> {
    xs.iter()
        .map(|x| x.map_or(Cell::Missing, Cell::Number))
        .collect()
}

/// {A, B} with three rows and {B, C} with two rows.
fn five_row_fixture() -> Vec<(Table, String)> {
    let ab = Table::new(
        Schema::from_features(vec![Feature::numeric("A"), Feature::numeric("B")]).unwrap(),
        vec![
            num(&[Some(1.0), Some(2.0), Some(6.0)]),
            num(&[Some(0.5), Some(1.0), Some(1.5)]),
        ],
    )
    .unwrap();
    let bc = Table::new(
        Schema::from_features(vec![Feature::numeric("B"), Feature::numeric("C")]).unwrap(),
        vec![num(&[Some(2.0), Some(2.0)]), num(&[Some(7.0), Some(9.0)])],
    )
    .unwrap();
    vec![(ab, "first".into()), (bc, "second".into())]
}

#[test]
fn joint_fills_blocks_with_pooled_statistics() {
    let tables = five_row_fixture();
    let out = comimp_combine(
        &tables,
        &ComImpPlan::new(ComImpMode::Joint, ImputerSpec::MeanMode),
        1,
    )
    .unwrap();
    let t = &out.table;
    assert_eq!(t.n_rows(), 5);
    assert_eq!(
        t.schema().names().collect::<Vec<_>>(),
        ["A", "B", "C", "source"]
    );
    assert_eq!(t.schema().source_feature(), Some("source"));
    // rows 4-5 never observed A; rows 1-3 never observed C
    assert_eq!(t.cell(3, 0), Cell::Number(3.0));
    assert_eq!(t.cell(4, 0), Cell::Number(3.0));
    assert_eq!(t.cell(0, 2), Cell::Number(8.0));
    assert_eq!(
        t.column(3),
        &[
            Cell::Category(0),
            Cell::Category(0),
            Cell::Category(0),
            Cell::Category(1),
            Cell::Category(1)
        ]
    );
    assert!(t.is_complete());
    assert_eq!(out.combined_schema.len(), 3);
}

#[test]
fn transfer_uses_the_reference_statistics() {
    let mut tables = five_row_fixture();
    // second table now misses one B value; pooled mean of observed B is 1.4, reference mean 1.0
    tables[1].0 = Table::new(
        tables[1].0.schema().clone(),
        vec![
            num(&[Some(2.0), None, Some(2.0)]),
            num(&[Some(7.0), Some(9.0), Some(8.0)]),
        ],
    )
    .unwrap();
    let pooled: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 2.0].to_vec();
    assert!((mean(&pooled) - 1.4).abs() < 1e-12);

    let transfer = comimp_combine(
        &tables,
        &ComImpPlan::new(ComImpMode::Transfer, ImputerSpec::MeanMode),
        1,
    )
    .unwrap();
    let t = &transfer.table;
    assert_eq!(t.schema().names().collect::<Vec<_>>(), ["A", "B", "source"]);
    assert_eq!(t.n_rows(), 6);
    assert_eq!(t.cell(4, 1), Cell::Number(1.0));
    assert_eq!(t.cell(3, 0), Cell::Number(3.0));

    let joint = comimp_combine(
        &tables,
        &ComImpPlan::new(ComImpMode::Joint, ImputerSpec::MeanMode),
        1,
    )
    .unwrap();
    match joint.table.cell(4, 1) {
        Cell::Number(x) => assert!((x - 1.4).abs() < 1e-12),
        other => panic!("{other:?}"),
    }
}

fn wide_schema(n: usize, extra: usize) -> Schema {
    let mut features: Vec<Feature> = (0..n - 1)
        .map(|i| Feature::numeric(format!("f{i}")))
        .collect();
    features.push(Feature::categorical("y", ["p", "q"]));
    for i in 0..extra {
        features.push(Feature::numeric(format!("extra{i}")));
    }
    Schema::new(features, Some("y".into()), None).unwrap()
}

fn random_table(schema: &Schema, n: usize, seed_value: u64) -> Table {
    let mut rng = seed::rng(seed_value);
    let cols = schema
        .features()
        .iter()
        .map(|f| {
            (0..n)
                .map(|_| {
                    if f.kind.is_numeric() {
                        Cell::Number(rng.gen_range(0.0..10.0))
                    } else {
                        Cell::Category(rng.gen_range(0..2))
                    }
                })
                .collect()
        })
        .collect();
    Table::new(schema.clone(), cols).unwrap()
}

#[test]
fn joint_feature_count_is_the_union() {
    let a = random_table(&wide_schema(31, 0), 20, 1);
    let b = random_table(&wide_schema(31, 2), 12, 2);
    let tables = vec![(a, "primary".to_string()), (b, "auxiliary".to_string())];
    let joint = comimp_combine(
        &tables,
        &ComImpPlan::new(ComImpMode::Joint, ImputerSpec::MeanMode),
        3,
    )
    .unwrap();
    assert_eq!(joint.combined_schema.len(), 33);
    assert_eq!(joint.table.n_cols(), 34);
    assert_eq!(joint.table.schema().target(), Some("y"));
    assert_eq!(joint.table.n_rows(), 32);
    let transfer = comimp_combine(
        &tables,
        &ComImpPlan::new(ComImpMode::Transfer, ImputerSpec::MeanMode),
        3,
    )
    .unwrap();
    assert_eq!(transfer.combined_schema.len(), 31);
    assert_eq!(transfer.table.n_cols(), 32);
}

#[test]
fn combine_rejects_kind_conflicts() {
    let a = Table::new(
        Schema::from_features(vec![Feature::numeric("A")]).unwrap(),
        vec![num(&[Some(1.0)])],
    )
    .unwrap();
    let b = Table::new(
        Schema::from_features(vec![Feature::categorical("A", ["x"])]).unwrap(),
        vec![vec![Cell::Category(0)]],
    )
    .unwrap();
    let tables = vec![(a, "a".to_string()), (b, "b".to_string())];
    for mode in [ComImpMode::Joint, ComImpMode::Transfer] {
        assert!(comimp_combine(&tables, &ComImpPlan::new(mode, ImputerSpec::MeanMode), 0).is_err());
    }
}

/// Corr-0.9 bivariate data with 20% of cells masked completely at random.
fn masked(n: usize) -> (Table, Table) {
    let truth = bivariate_gaussian(n, 0.9, 2024);
    let mut rng = seed::rng(77);
    let cols = (0..2)
        .map(|j| {
            truth
                .column(j)
                .iter()
                .map(|c| if rng.gen_bool(0.2) { Cell::Missing } else { *c })
                .collect()
        })
        .collect();
    (
        truth.clone(),
        Table::new(truth.schema().clone(), cols).unwrap(),
    )
}

fn rmse(truth: &Table, incomplete: &Table, imputed: &Table) -> f64 {
    let mut sq = 0.0;
    let mut count = 0;
    for j in 0..truth.n_cols() {
        for i in 0..truth.n_rows() {
            if incomplete.cell(i, j).is_missing() {
                let d =
                    truth.cell(i, j).as_number().unwrap() - imputed.cell(i, j).as_number().unwrap();
                sq += d * d;
                count += 1;
            }
        }
    }
    (sq / count as f64).sqrt()
}

#[test]
fn missarf_beats_meanmode_on_correlated_data() {
    let (truth, incomplete) = masked(500);
    let mm = fit_meanmode(&incomplete)
        .unwrap()
        .apply(&incomplete)
        .unwrap();
    let arf = fit_missarf(&incomplete, &MissArfParams::default(), 5).unwrap();
    let ma = arf.apply(&incomplete).unwrap();
    let (e_mm, e_arf) = (
        rmse(&truth, &incomplete, &mm),
        rmse(&truth, &incomplete, &ma),
    );
    assert!(e_arf < e_mm, "missarf {e_arf} vs meanmode {e_mm}");
}

#[test]
fn combine_is_deterministic() {
    let (_, incomplete) = masked(60);
    let other = incomplete.select_columns(&["y"]).unwrap();
    let tables = vec![(incomplete, "a".to_string()), (other, "b".to_string())];
    for mode in [ComImpMode::Joint, ComImpMode::Transfer] {
        let plan = ComImpPlan::new(mode, ImputerSpec::missarf());
        let a = comimp_combine(&tables, &plan, 8).unwrap();
        let b = comimp_combine(&tables, &plan, 8).unwrap();
        assert_eq!(a.table, b.table);
        assert!(a.table.is_complete());
    }
}

fn arb_incomplete() -> impl Strategy<Value = Table> {
    prop::collection::vec(
        (
            prop::option::weighted(0.7, -5.0f64..5.0),
            prop::option::weighted(0.7, 0u32..3),
            prop::option::weighted(0.7, 0.0f64..1.0),
        ),
        6..30,
    )
    .prop_map(|rows| {
        let mut rows = rows;
        // keep at least one observation per column
        rows[0] = (Some(0.0), Some(0), Some(0.5));
        let schema = Schema::from_features(vec![
            Feature::numeric("a"),
            Feature::categorical("c", ["u", "v", "w"]),
            Feature::numeric("b"),
        ])
        .unwrap();
        Table::new(
            schema,
            vec![
                rows.iter()
                    .map(|r| r.0.map_or(Cell::Missing, Cell::Number))
                    .collect(),
                rows.iter()
                    .map(|r| r.1.map_or(Cell::Missing, Cell::Category))
                    .collect(),
                rows.iter()
                    .map(|r| r.2.map_or(Cell::Missing, Cell::Number))
                    .collect(),
            ],
        )
        .unwrap()
    })
}

fn observed_cells_kept(input: &Table, output: &Table) -> bool {
    (0..input.n_cols()).all(|j| {
        input
            .column(j)
            .iter()
            .zip(output.column(j))
            .all(|(a, b)| a.is_missing() || a == b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn imputers_keep_observed_cells_and_fill_the_rest(t in arb_incomplete(), s in any::<u64>()) {
        let mm = fit_meanmode(&t).unwrap();
        let once = mm.apply(&t).unwrap();
        prop_assert!(once.is_complete());
        prop_assert!(observed_cells_kept(&t, &once));
        prop_assert_eq!(mm.apply(&once).unwrap(), once.clone());

        let params = MissArfParams {
            arf: arfaug::arf::ArfParams {
                forest: arfaug::forest::ForestParams { n_trees: 10, ..arfaug::forest::ForestParams::discriminator() },
                max_iters: 3,
                ..Default::default()
            },
            ..MissArfParams::default()
        };
        let arf = fit_missarf(&t, &params, s).unwrap();
        let out = arf.apply(&t).unwrap();
        prop_assert!(out.is_complete());
        prop_assert!(observed_cells_kept(&t, &out));
        prop_assert_eq!(arf.apply(&t).unwrap(), out.clone());
        for (j, name) in [(0usize, "a"), (2, "b")] {
            let xs: Vec<f64> = t.column(j).iter().filter_map(Cell::as_number).collect();
            let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            let inside = out.column(j).iter().all(|c| {
                let v = c.as_number().unwrap();
                v >= lo && v <= hi
            });
            prop_assert!(inside, "{} outside envelope", name);
        }
    }

    #[test]
    fn joint_source_column_partitions_rows(t in arb_incomplete(), split in 1usize..5) {
        let split = split.min(t.n_rows() - 1);
        let head = t.select_rows(&(0..split).collect::<Vec<_>>()).unwrap();
        let tail = t.select_rows(&(split..t.n_rows()).collect::<Vec<_>>()).unwrap().drop_columns(&["b"]).unwrap();
        let tables = vec![(head, "h".to_string()), (tail, "t".to_string())];
        let out = comimp_combine(&tables, &ComImpPlan::new(ComImpMode::Joint, ImputerSpec::MeanMode), 0);
        // the tail may have lost every observation of a column; that is a fit error, not a panic
        if let Ok(out) = out {
            prop_assert_eq!(out.table.n_rows(), t.n_rows());
            let src = out.table.column_by_name("source").unwrap();
            for (i, c) in src.iter().enumerate() {
                prop_assert_eq!(*c, Cell::Category((i >= split) as u32));
            }
        }
    }
}
