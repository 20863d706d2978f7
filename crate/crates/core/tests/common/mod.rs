#![allow(dead_code)]

use arfaug::seed;
use arfaug::{Cell, Feature, Schema, Table};
use rand::Rng;
use rand_distr::StandardNormal;

/// Standard bivariate normal with correlation `rho`.
pub fn bivariate_gaussian(n: usize, rho: f64, seed_value: u64) -> Table {
    let mut rng = seed::rng(seed_value);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        xs.push(Cell::Number(z1));
        ys.push(Cell::Number(rho * z1 + (1.0 - rho * rho).sqrt() * z2));
    }
    let schema = Schema::from_features(vec![Feature::numeric("x"), Feature::numeric("y")]).unwrap();
    Table::new(schema, vec![xs, ys]).unwrap()
}

pub fn numbers(table: &Table, name: &str) -> Vec<f64> {
    table
        .column_by_name(name)
        .unwrap()
        .iter()
        .map(|c| c.as_number().unwrap())
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Single categorical column with `n_a` copies of "a" followed by `n - n_a` of "b".
pub fn two_level_column(n: usize, n_a: usize) -> Table {
    let schema = Schema::from_features(vec![Feature::categorical("c", ["a", "b"])]).unwrap();
    let col = (0..n).map(|i| Cell::Category((i >= n_a) as u32)).collect();
    Table::new(schema, vec![col]).unwrap()
}

pub fn frequency(table: &Table, col: usize, level: u32) -> f64 {
    let c = table.column(col);
    c.iter().filter(|x| **x == Cell::Category(level)).count() as f64 / c.len() as f64
}
