//! Adversarial random forests.
//!
//! Training alternates a discriminator (a forest separating real rows from
//! synthetic ones) with a generator that resamples feature values
//! independently within the discriminator's leaves. Once the discriminator's
//! out-of-bag accuracy drops to `0.5 + delta`, the forest that produced the
//! last synthetic batch becomes the model: each of its leaves gets a weight
//! (share of real rows) and one univariate density per feature.

mod conditional;
mod density;

pub use conditional::{
    conditional_leaves, evidence_from_row, sample_conditional, ConditionalLeaves,
    ConditionalSample, Evidence, EvidenceValue, Fallback,
};
pub use density::{FeatureDensity, LeafDensity, TruncatedNormal};

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{encode_table, Encoded, Forest, ForestParams, Interval};
use crate::seed;
use crate::table::{Cell, FeatureKind, Schema, Table};

pub const ARF_FORMAT: &str = "arfaug-arf/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArfParams {
    #[serde(default = "ForestParams::discriminator")]
    pub forest: ForestParams,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Synthetic rows per adversarial round; `None` means as many as real rows.
    #[serde(default)]
    pub synthetic_size: Option<usize>,
}

fn default_delta() -> f64 {
    0.05
}

fn default_max_iters() -> usize {
    10
}

impl Default for ArfParams {
    fn default() -> Self {
        ArfParams {
            forest: ForestParams::discriminator(),
            delta: default_delta(),
            max_iters: default_max_iters(),
            synthetic_size: None,
        }
    }
}

/// Per numeric column: observed range and sample sd over the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnEnvelope {
    pub min: f64,
    pub max: f64,
    pub sd: f64,
}

impl ColumnEnvelope {
    /// Floor applied to within-leaf standard deviations.
    pub fn sd_floor(&self) -> f64 {
        1e-3 * self.sd
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArfModel {
    format: String,
    pub schema: Schema,
    pub forest: Forest,
    pub leaves: Vec<LeafDensity>,
    /// Discriminator out-of-bag accuracy per adversarial round.
    pub accuracy_history: Vec<f64>,
    pub converged: bool,
    pub delta: f64,
    pub seed: u64,
    /// Envelope per feature; `None` for categorical features.
    pub envelopes: Vec<Option<ColumnEnvelope>>,
    n_train: usize,
}

pub(crate) fn encode_full(table: &Table) -> Result<Encoded> {
    encode_table(table, table.schema().features())
}

pub(crate) fn decode(data: &Encoded, schema: &Schema) -> Result<Table> {
    let columns = data
        .columns
        .iter()
        .zip(schema.features())
        .map(|(col, f)| {
            col.iter()
                .map(|&x| {
                    if x.is_nan() {
                        Cell::Missing
                    } else if f.kind.is_numeric() {
                        Cell::Number(x)
                    } else {
                        Cell::Category(x as u32)
                    }
                })
                .collect()
        })
        .collect();
    if data.n_rows == 0 {
        return Ok(Table::empty(schema.clone()));
    }
    Table::new(schema.clone(), columns)
}

fn column_bootstrap(data: &Encoded, m: usize, seed: u64) -> Encoded {
    let mut rng = seed::rng(seed);
    let columns = data
        .columns
        .iter()
        .map(|col| {
            let observed: Vec<f64> = col.iter().copied().filter(|x| !x.is_nan()).collect();
            (0..m)
                .map(|_| observed[rng.gen_range(0..observed.len())])
                .collect()
        })
        .collect();
    Encoded {
        n_rows: m,
        columns,
        n_levels: data.n_levels.clone(),
    }
}

/// Draw `m` rows whose cells are sampled independently from each column's
/// observed values.
pub fn initial_synthetic(table: &Table, m: usize, seed: u64) -> Result<Table> {
    if table.n_rows() == 0 {
        return Err(Error::InvalidArgument(
            "cannot sample from an empty table".into(),
        ));
    }
    table.require_complete()?;
    let data = encode_full(table)?;
    decode(&column_bootstrap(&data, m, seed), table.schema())
}

/// Column-wise bootstrap that only fills missing cells; used to complete a
/// table before fitting.
pub(crate) fn bootstrap_fill(table: &Table, seed: u64) -> Result<Table> {
    let mut data = encode_full(table)?;
    let mut rng = seed::rng(seed);
    for (j, col) in data.columns.iter_mut().enumerate() {
        let observed: Vec<f64> = col.iter().copied().filter(|x| !x.is_nan()).collect();
        if observed.is_empty() {
            return Err(Error::AllMissing(table.schema().feature(j).name.clone()));
        }
        for x in col.iter_mut().filter(|x| x.is_nan()) {
            *x = observed[rng.gen_range(0..observed.len())];
        }
    }
    decode(&data, table.schema())
}

fn concat(a: &Encoded, b: &Encoded) -> Encoded {
    Encoded {
        n_rows: a.n_rows + b.n_rows,
        columns: a
            .columns
            .iter()
            .zip(&b.columns)
            .map(|(x, y)| x.iter().chain(y).copied().collect())
            .collect(),
        n_levels: a.n_levels.clone(),
    }
}

/// Leaf of each real row, per tree.
fn real_leaves(forest: &Forest, real: &Encoded) -> Vec<Vec<u32>> {
    forest
        .trees
        .par_iter()
        .map(|tree| {
            (0..real.n_rows)
                .map(|i| tree.route(|f| real.get(i, f)).expect("complete data"))
                .collect()
        })
        .collect()
}

/// Generator step: pick a tree, pick a leaf in proportion to its real-row
/// coverage, then draw every feature from the real rows of that leaf.
fn resample_within_leaves(forest: &Forest, real: &Encoded, m: usize, seed: u64) -> Encoded {
    let leaves = real_leaves(forest, real);
    let members: Vec<HashMap<u32, Vec<usize>>> = leaves
        .iter()
        .map(|ids| {
            let mut map: HashMap<u32, Vec<usize>> = HashMap::new();
            for (i, &leaf) in ids.iter().enumerate() {
                map.entry(leaf).or_default().push(i);
            }
            map
        })
        .collect();
    let p = real.columns.len();
    let mut columns = vec![Vec::with_capacity(m); p];
    let mut rng = seed::rng(seed);
    for _ in 0..m {
        let t = rng.gen_range(0..forest.trees.len());
        let anchor = rng.gen_range(0..real.n_rows);
        let rows = &members[t][&leaves[t][anchor]];
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(real.get(rows[rng.gen_range(0..rows.len())], j));
        }
    }
    Encoded {
        n_rows: m,
        columns,
        n_levels: real.n_levels.clone(),
    }
}

fn envelopes(table: &Table, real: &Encoded) -> Vec<Option<ColumnEnvelope>> {
    table
        .schema()
        .features()
        .iter()
        .zip(&real.columns)
        .map(|(f, col)| {
            f.kind.is_numeric().then(|| {
                let (_, sd) = crate::table::mean_sd(col);
                ColumnEnvelope {
                    min: col.iter().copied().fold(f64::INFINITY, f64::min),
                    max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    sd: sd.unwrap_or(0.0),
                }
            })
        })
        .collect()
}

/// Fit an adversarial random forest on a complete table. Every column,
/// including any target, is modelled.
pub fn fit_arf(table: &Table, params: &ArfParams, seed: u64) -> Result<ArfModel> {
    table.require_complete()?;
    let n = table.n_rows();
    if n < 2 * params.forest.min_node_size || n < 2 {
        return Err(Error::Fit(format!(
            "need at least {} rows, got {n}",
            (2 * params.forest.min_node_size).max(2)
        )));
    }
    if params.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    let real = encode_full(table)?;
    let features = table.schema().features().to_vec();
    let classes = vec!["synthetic".to_string(), "real".to_string()];
    let m = params.synthetic_size.unwrap_or(n).max(1);
    let labels: Vec<u32> = std::iter::repeat_n(1, n)
        .chain(std::iter::repeat_n(0, m))
        .collect();

    let mut synthetic = column_bootstrap(&real, m, seed::derive(seed, &[0, 0]));
    let mut history = Vec::new();
    let mut generator: Option<Forest> = None;
    let mut converged = false;
    let final_forest = loop {
        let round = history.len() as u64;
        let corpus = concat(&real, &synthetic);
        let discriminator = Forest::fit_encoded(
            &corpus,
            features.clone(),
            &labels,
            classes.clone(),
            &params.forest,
            seed::derive(seed, &[round, 1]),
        )?;
        let acc = discriminator.oob_accuracy().accuracy;
        history.push(acc);
        log::debug!(
            "arf round {}: discriminator oob accuracy {acc:.4}",
            round + 1
        );
        if acc <= 0.5 + params.delta {
            converged = true;
            break generator.unwrap_or(discriminator);
        }
        if history.len() >= params.max_iters {
            break generator.unwrap_or(discriminator);
        }
        synthetic = resample_within_leaves(
            &discriminator,
            &real,
            m,
            seed::derive(seed, &[round + 1, 0]),
        );
        generator = Some(discriminator);
    };

    let envelopes = envelopes(table, &real);
    let leaves = estimate_leaf_densities(&final_forest, table.schema(), &real, &envelopes);
    Ok(ArfModel {
        format: ARF_FORMAT.into(),
        schema: table.schema().clone(),
        forest: final_forest,
        leaves,
        accuracy_history: history,
        converged,
        delta: params.delta,
        seed,
        envelopes,
        n_train: n,
    })
}

fn estimate_leaf_densities(
    forest: &Forest,
    schema: &Schema,
    real: &Encoded,
    envelopes: &[Option<ColumnEnvelope>],
) -> Vec<LeafDensity> {
    let n = real.n_rows;
    let n_trees = forest.trees.len();
    forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            // real rows passing through each node
            let mut node_rows: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
            for i in 0..n {
                let path = tree.route_path(|f| real.get(i, f)).expect("complete data");
                for id in path {
                    node_rows[id as usize].push(i);
                }
            }
            let mut out = Vec::new();
            for leaf_id in tree.leaf_ids() {
                let rows = &node_rows[leaf_id as usize];
                if rows.is_empty() {
                    continue;
                }
                let region = tree.bounds(leaf_id, schema.len());
                // nearest ancestor with at least two real rows
                let mut pooled = leaf_id;
                while node_rows[pooled as usize].len() < 2 {
                    match tree.nodes[pooled as usize].parent {
                        Some(p) => pooled = p,
                        None => break,
                    }
                }
                let pooled_rows = &node_rows[pooled as usize];
                let features = schema
                    .features()
                    .iter()
                    .enumerate()
                    .map(|(j, f)| match &f.kind {
                        FeatureKind::Numeric => {
                            let env = envelopes[j].as_ref().expect("numeric envelope");
                            let source = if rows.len() >= 2 { rows } else { pooled_rows };
                            let xs: Vec<f64> = source.iter().map(|&i| real.get(i, j)).collect();
                            let (mean, sd) = crate::table::mean_sd(&xs);
                            let Interval { lower, upper } = region[j];
                            let lower = lower.map_or(env.min, |l| l.max(env.min));
                            let upper = upper.map_or(env.max, |u| u.min(env.max));
                            FeatureDensity::Numeric(TruncatedNormal {
                                mean: mean.expect("non-empty"),
                                sd: sd.unwrap_or(0.0).max(env.sd_floor()),
                                lower: lower.min(upper),
                                upper,
                            })
                        }
                        FeatureKind::Categorical { levels } => {
                            let mut counts = vec![0usize; levels.len()];
                            for &i in rows {
                                counts[real.get(i, j) as usize] += 1;
                            }
                            let allowed = tree.allowed_levels(leaf_id, j, levels.len());
                            FeatureDensity::categorical(&counts, &allowed)
                        }
                    })
                    .collect();
                out.push(LeafDensity {
                    tree: t as u32,
                    leaf: leaf_id,
                    weight: rows.len() as f64 / (n as f64 * n_trees as f64),
                    coverage: rows.len() as u32,
                    region,
                    features,
                });
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Cumulative weights for inverse-CDF leaf draws.
pub(crate) fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

pub(crate) fn draw_index<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("non-empty");
    let u = rng.gen::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl ArfModel {
    /// Assemble a model from parts, checking the weight and density invariants.
    pub fn from_parts(
        schema: Schema,
        forest: Forest,
        leaves: Vec<LeafDensity>,
        envelopes: Vec<Option<ColumnEnvelope>>,
        seed: u64,
    ) -> Result<ArfModel> {
        if leaves.is_empty() {
            return Err(Error::InvalidArgument(
                "model needs at least one leaf".into(),
            ));
        }
        let total: f64 = leaves.iter().map(|l| l.weight).sum();
        if (total - 1.0).abs() > 1e-9 || leaves.iter().any(|l| l.weight < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "leaf weights sum to {total}"
            )));
        }
        for leaf in &leaves {
            if leaf.features.len() != schema.len() {
                return Err(Error::InvalidArgument("leaf density arity mismatch".into()));
            }
        }
        Ok(ArfModel {
            format: ARF_FORMAT.into(),
            n_train: 0,
            schema,
            forest,
            leaves,
            accuracy_history: Vec::new(),
            converged: true,
            delta: default_delta(),
            seed,
            envelopes,
        })
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn iterations(&self) -> usize {
        self.accuracy_history.len()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.accuracy_history.last().copied()
    }

    fn sample_leaf_row<R: Rng>(&self, leaf: &LeafDensity, rng: &mut R) -> Vec<f64> {
        leaf.features.iter().map(|d| d.sample(rng)).collect()
    }

    /// Generate `m` complete rows. Row `i` uses its own stream derived from
    /// `(seed, i)`, so output does not depend on thread count.
    pub fn generate(&self, m: usize, seed: u64) -> Result<Table> {
        let cdf = cumulative(self.leaves.iter().map(|l| l.weight));
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng_for(seed, &[i as u64]);
                let leaf = &self.leaves[draw_index(&cdf, &mut rng)];
                self.sample_leaf_row(leaf, &mut rng)
            })
            .collect();
        let p = self.schema.len();
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        decode(
            &Encoded {
                n_rows: m,
                columns,
                n_levels: Vec::new(),
            },
            &self.schema,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<ArfModel> {
        let model: ArfModel = serde_json::from_str(text)?;
        if model.format != ARF_FORMAT {
            return Err(Error::Format(format!(
                "expected {ARF_FORMAT}, found {}",
                model.format
            )));
        }
        Ok(model)
    }
}

pub fn generate(model: &ArfModel, m: usize, seed: u64) -> Result<Table> {
    model.generate(m, seed)
}
