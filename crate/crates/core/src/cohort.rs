//! Deterministic simulated discharge-destination cohorts.
//!
//! Two tables share a latent model (frailty, cognitive deficit, acute
//! medical burden per destination class). The primary table carries the
//! full assessment battery; the auxiliary register lacks most functional
//! scores, adds two cognitive tests, and has heavier missingness.

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::Normal;

use std::fs;
use std::path::Path;

use crate::csv_io::write_csv_file;
use crate::error::Result;
use crate::seed;
use crate::table::{Cell, Feature, Schema, Table};

pub const TARGET: &str = "discharge";

pub const DESTINATIONS: [&str; 4] = [
    "acute geriatric care unit",
    "rehabilitation",
    "back home",
    "nursing home",
];

/// Class counts per destination.
pub const PRIMARY_COUNTS: [usize; 4] = [75, 9, 79, 6];
pub const AUXILIARY_COUNTS: [usize; 4] = [46, 6, 20, 10];

/// Features the auxiliary register does not record.
pub const PRIMARY_ONLY: [&str; 10] = [
    "social_contacts",
    "barthel_pre_illness",
    "barthel_pre_op",
    "barthel_pod1",
    "barthel_pod3",
    "barthel_pod3_transfers",
    "charmi_pod1",
    "charmi_pod3",
    "cfs",
    "moca",
];

pub const AUXILIARY_ONLY: [&str; 2] = ["cit", "mmse"];

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub primary: Table,
    pub auxiliary: Table,
}

/// Mean (frailty, cognitive deficit, acute burden) per destination.
const LATENT_MEANS: [[f64; 3]; 4] = [
    [0.6, 0.3, 0.8],
    [0.2, -0.5, -0.3],
    [-1.0, -0.5, -0.5],
    [1.3, 1.2, 0.2],
];

#[derive(Clone, Copy)]
enum Site {
    Primary,
    Auxiliary,
}

enum Value {
    Num(f64),
    Cat(&'static str),
}

struct Column {
    feature: Feature,
    values: Vec<Value>,
    missing: usize,
    /// Share the missing rows of this earlier column.
    missing_like: Option<&'static str>,
}

fn clamp_round(x: f64, lo: f64, hi: f64) -> f64 {
    x.round().clamp(lo, hi)
}

fn round5(x: f64) -> f64 {
    ((x / 5.0).round() * 5.0).clamp(0.0, 100.0)
}

struct Sim {
    rng: seed::Rng,
    z: Normal,
    aux: bool,
    latent: Vec<[f64; 3]>,
    cols: Vec<Column>,
}

impl Sim {
    fn e(&mut self, scale: f64) -> f64 {
        scale * self.rng.sample(self.z)
    }

    fn pick(&mut self, levels: &[&'static str], weights: &[f64]) -> &'static str {
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.gen::<f64>() * total;
        for (l, w) in levels.iter().zip(weights) {
            if u < *w {
                return l;
            }
            u -= w;
        }
        levels[levels.len() - 1]
    }

    /// `missing` is (primary, auxiliary) missing counts.
    fn push(&mut self, feature: Feature, missing: (usize, usize), values: Vec<Value>) {
        let missing = if self.aux { missing.1 } else { missing.0 };
        self.cols.push(Column {
            feature,
            values,
            missing,
            missing_like: None,
        });
    }

    fn numeric(
        &mut self,
        name: &str,
        missing: (usize, usize),
        f: impl Fn(&[f64; 3], &mut Self) -> f64,
    ) {
        let latent = self.latent.clone();
        let values = latent.iter().map(|l| Value::Num(f(l, self))).collect();
        self.push(Feature::numeric(name), missing, values);
    }

    fn binary(
        &mut self,
        name: &str,
        missing: (usize, usize),
        yes: impl Fn(&[f64; 3], &mut Self) -> bool,
    ) {
        let latent = self.latent.clone();
        let values = latent
            .iter()
            .map(|l| Value::Cat(if yes(l, self) { "yes" } else { "no" }))
            .collect();
        self.push(Feature::categorical(name, ["yes", "no"]), missing, values);
    }
}

fn simulate(site: Site, counts: &[usize; 4], seed_value: u64) -> Result<Table> {
    let mut rng = seed::rng(seed_value);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng);
    let n = labels.len();
    let aux = matches!(site, Site::Auxiliary);
    let shift = if aux { 0.4 } else { 0.0 };
    let z = Normal::new(0.0, 1.0).expect("valid normal");
    let latent = labels
        .iter()
        .map(|&c| {
            let m = LATENT_MEANS[c];
            let df = rng.sample(z);
            let f = m[0] + shift + df;
            let g = m[1] + shift + 0.4 * df + 0.9 * rng.sample(z);
            let a = m[2] + rng.sample(z);
            [f, g, a]
        })
        .collect();
    let mut s = Sim {
        rng,
        z,
        aux,
        latent,
        cols: Vec::new(),
    };

    let dept = ["AVC", "UCH", "URO"];
    let v = (0..n)
        .map(|_| {
            Value::Cat(if aux {
                "UCH"
            } else {
                s.pick(&dept, &[0.13, 0.75, 0.12])
            })
        })
        .collect();
    s.push(Feature::categorical("department", dept), (0, 0), v);

    let sex = ["male", "female"];
    let p_male = if aux { 0.29 } else { 0.41 };
    let v = (0..n)
        .map(|_| Value::Cat(s.pick(&sex, &[p_male, 1.0 - p_male])))
        .collect();
    s.push(Feature::categorical("sex", sex), (0, 0), v);

    let base_age = if aux { 84.0 } else { 80.0 };
    s.numeric("age", (0, 0), |l, s| {
        (base_age + 2.0 * l[0] + s.e(5.0)).round().max(70.0)
    });
    s.numeric("time_to_op", (1, 2), |l, s| {
        (7.4 + 0.2 * l[2] + s.e(1.0)).exp().round()
    });
    s.numeric("cut_to_suture", (1, 4), |_, s| {
        (4.3 + s.e(0.55)).exp().round()
    });
    s.numeric("icu_los", (18, 29), |l, s| {
        (4.9 + 0.4 * l[2] + s.e(1.1)).exp().round()
    });
    s.binary("transfusion", (0, 51), |l, s| 0.3 * l[2] + s.e(1.0) > 0.47);
    s.numeric("social_grade", (0, 18), |l, s| {
        clamp_round(0.8 * l[0] + 0.3 + s.e(0.8), 0.0, 5.0)
    });

    let care = [
        "assisted living",
        "nursing home",
        "home with help",
        "home without help",
    ];
    let v = labels
        .iter()
        .zip(s.latent.clone())
        .map(|(&c, l)| {
            let weights = if c == 3 {
                [0.1, 0.6, 0.25, 0.05]
            } else if l[0] > 0.5 {
                [0.05, 0.06, 0.79, 0.1]
            } else {
                [0.02, 0.02, 0.7, 0.26]
            };
            Value::Cat(s.pick(&care, &weights))
        })
        .collect();
    s.push(Feature::categorical("previous_care", care), (0, 4), v);

    s.binary("adl_help", (0, 3), |l, s| l[0] + 1.2 + s.e(0.8) > 0.0);
    s.numeric("social_contacts", (3, 0), |l, s| {
        (10.0 - 3.0 * l[0] + s.e(8.0)).round().max(0.0)
    });
    s.numeric("barthel_pre_illness", (1, 0), |l, s| {
        round5(90.0 - 12.0 * l[0] + s.e(12.0))
    });
    s.numeric("barthel_pre_op", (0, 0), |l, s| {
        round5(60.0 - 18.0 * l[0] - 8.0 * l[2] + s.e(20.0))
    });
    s.numeric("barthel_pod1", (6, 0), |l, s| {
        round5(45.0 - 12.0 * l[0] - 8.0 * l[2] + s.e(15.0))
    });
    s.numeric("barthel_pod3", (14, 0), |l, s| {
        round5(54.0 - 13.0 * l[0] - 6.0 * l[2] + s.e(15.0))
    });

    let pod3: Vec<f64> = match s.cols.last() {
        Some(c) => c
            .values
            .iter()
            .map(|v| match v {
                Value::Num(x) => *x,
                Value::Cat(_) => unreachable!("numeric column"),
            })
            .collect(),
        None => unreachable!("pod3 pushed above"),
    };
    let v = pod3
        .iter()
        .map(|p| {
            Value::Cat(match p + s.e(8.0) {
                x if x < 30.0 => "0",
                x if x < 50.0 => "5",
                x if x < 62.0 => "10",
                _ => "15",
            })
        })
        .collect();
    s.push(
        Feature::categorical("barthel_pod3_transfers", ["0", "5", "10", "15"]),
        (14, 0),
        v,
    );
    s.cols.last_mut().expect("just pushed").missing_like = Some("barthel_pod3");

    let discharge_base = if aux { 46.0 } else { 64.0 };
    s.numeric("barthel_discharge", (1, 31), |l, s| {
        round5(discharge_base - 14.0 * l[0] - 5.0 * l[2] + s.e(14.0))
    });
    let charmi_pre = if aux { 9.6 } else { 8.0 };
    s.numeric("charmi_pre_illness", (5, 59), |l, s| {
        clamp_round(charmi_pre - 1.4 * l[0] + s.e(1.8), 0.0, 10.0)
    });
    s.numeric("charmi_pod1", (5, 0), |l, s| {
        clamp_round(2.6 - 1.2 * l[0] - 0.8 * l[2] + s.e(1.8), 0.0, 10.0)
    });
    s.numeric("charmi_pod3", (15, 0), |l, s| {
        clamp_round(4.3 - 1.3 * l[0] - 0.5 * l[2] + s.e(1.8), 0.0, 10.0)
    });
    let charmi_dis = if aux { 6.8 } else { 5.5 };
    s.numeric("charmi_discharge", (1, 64), |l, s| {
        clamp_round(charmi_dis - 1.4 * l[0] - 0.5 * l[2] + s.e(1.8), 0.0, 10.0)
    });
    let isar_min = if aux { 1.0 } else { 2.0 };
    s.numeric("isar", (0, 41), |l, s| {
        clamp_round(2.9 + 0.5 * l[0] + s.e(0.9), isar_min, 6.0)
    });
    s.binary("frailty_impression", (0, 16), |l, s| l[0] + s.e(0.8) > 0.0);
    s.numeric("cfs", (0, 0), |l, s| {
        clamp_round(4.0 + 1.3 * l[0] + s.e(0.9), 1.0, 8.0)
    });
    let asa_base = if aux { 2.8 } else { 2.0 };
    s.numeric("asa", (1, 2), |l, s| {
        clamp_round(asa_base + 0.3 * l[0] + 0.2 * l[2] + s.e(0.45), 0.0, 4.0)
    });
    s.numeric("mcci", (0, 5), |l, s| {
        clamp_round(1.1 + 0.5 * l[0] + 0.3 * l[2] + s.e(1.0), 0.0, 7.0)
    });
    let meds = if aux { 6.9 } else { 8.9 };
    s.numeric("n_medications", (0, 5), |l, s| {
        (meds + 1.2 * l[0] + s.e(3.4)).round().max(0.0)
    });
    s.numeric("moca", (18, 0), |l, s| {
        clamp_round(22.0 - 4.0 * l[1] + s.e(3.5), 0.0, 30.0)
    });
    s.binary("dementia", (0, 31), |l, s| l[1] + s.e(0.7) > 1.3);

    let ops = ["5-55", "5-79", "5-82", "5-83", "other"];
    let weights: &[f64] = if aux {
        &[0.0, 0.57, 0.3, 0.04, 0.09]
    } else {
        &[0.07, 0.38, 0.17, 0.05, 0.33]
    };
    let v = (0..n).map(|_| Value::Cat(s.pick(&ops, weights))).collect();
    s.push(Feature::categorical("ops_code", ops), (0, 0), v);

    s.numeric("cit", (0, 44), |l, s| {
        clamp_round(22.0 - 4.0 * l[1] + s.e(3.5), 0.0, 28.0)
    });
    s.numeric("mmse", (0, 43), |l, s| {
        clamp_round(21.0 - 4.5 * l[1] + s.e(3.5), 0.0, 30.0)
    });

    let v = labels
        .iter()
        .map(|&c| Value::Cat(DESTINATIONS[c]))
        .collect();
    s.push(Feature::categorical(TARGET, DESTINATIONS), (0, 0), v);

    let absent: &[&str] = if aux { &PRIMARY_ONLY } else { &AUXILIARY_ONLY };
    let Sim {
        mut rng, mut cols, ..
    } = s;
    cols.retain(|c| !absent.contains(&c.feature.name.as_str()));

    let mut masks: Vec<(String, Vec<usize>)> = Vec::new();
    let mut features = Vec::new();
    let mut columns = Vec::new();
    for col in cols {
        let rows = match col.missing_like {
            Some(name) => masks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, r)| r.clone())
                .unwrap_or_default(),
            None => {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all.truncate(col.missing);
                all
            }
        };
        let mut cells: Vec<Cell> = col
            .values
            .iter()
            .map(|v| match v {
                Value::Num(x) => Cell::Number(*x),
                Value::Cat(l) => {
                    Cell::Category(col.feature.kind.level_index(l).expect("known level"))
                }
            })
            .collect();
        for &r in &rows {
            cells[r] = Cell::Missing;
        }
        masks.push((col.feature.name.clone(), rows));
        features.push(col.feature);
        columns.push(cells);
    }
    let schema = Schema::new(features, Some(TARGET.into()), None)?;
    Table::new(schema, columns)
}

/// The primary and auxiliary cohorts for `seed`.
pub fn discharge_cohort(seed_value: u64) -> Result<Cohort> {
    Ok(Cohort {
        primary: simulate(
            Site::Primary,
            &PRIMARY_COUNTS,
            seed::derive(seed_value, &[1]),
        )?,
        auxiliary: simulate(
            Site::Auxiliary,
            &AUXILIARY_COUNTS,
            seed::derive(seed_value, &[2]),
        )?,
    })
}

pub const PRIMARY_CSV: &str = "primary.csv";
pub const PRIMARY_SCHEMA: &str = "primary.schema.json";
pub const AUXILIARY_CSV: &str = "auxiliary.csv";
pub const AUXILIARY_SCHEMA: &str = "auxiliary.schema.json";

/// Write both tables and their schemas into `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv_file(&cohort.primary, dir.join(PRIMARY_CSV))?;
    write_csv_file(&cohort.auxiliary, dir.join(AUXILIARY_CSV))?;
    fs::write(dir.join(PRIMARY_SCHEMA), cohort.primary.schema().to_json()?)?;
    fs::write(
        dir.join(AUXILIARY_SCHEMA),
        cohort.auxiliary.schema().to_json()?,
    )?;
    Ok(())
}
