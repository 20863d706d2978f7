//! Random forest classifier with out-of-bag bookkeeping and leaf queries.

mod tree;

pub use tree::{Encoded, Interval, Leaf, Node, NodeKind, SplitRule, Tree, EXHAUSTIVE_LEVELS};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::PredictionMatrix;
use crate::seed;
use crate::table::{Cell, Feature, FeatureKind, Table};
use tree::GrowParams;

pub const FOREST_FORMAT: &str = "arfaug-forest/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means ⌈√p⌉.
    #[serde(default)]
    pub mtry: Option<usize>,
    /// Minimum number of training samples in each child of a split.
    pub min_node_size: usize,
    pub bootstrap: bool,
}

impl ForestParams {
    /// Defaults for the standalone classifier.
    pub fn learner() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_node_size: 1,
            bootstrap: true,
        }
    }

    /// Defaults for the adversarial discriminator.
    pub fn discriminator() -> Self {
        ForestParams {
            n_trees: 100,
            mtry: None,
            min_node_size: 5,
            bootstrap: true,
        }
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams::learner()
    }
}

/// Out-of-bag hard votes collected during fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OobRecord {
    pub truth: Vec<u32>,
    /// Row-major n × K vote counts from trees where the row was out of bag.
    pub votes: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OobAccuracy {
    pub accuracy: f64,
    pub n_evaluated: usize,
    /// Rows that were in bag for every tree.
    pub n_uncovered: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format: String,
    pub params: ForestParams,
    pub features: Vec<Feature>,
    pub classes: Vec<String>,
    pub trees: Vec<Tree>,
    pub oob: Option<OobRecord>,
    /// Set when training saw a single class; predictions are then constant.
    pub constant_class: Option<u32>,
    pub warnings: Vec<String>,
}

/// Encode `table` columns named by `features`, remapping categorical levels by name.
pub fn encode_table(table: &Table, features: &[Feature]) -> Result<Encoded> {
    let mut columns = Vec::with_capacity(features.len());
    let mut n_levels = Vec::with_capacity(features.len());
    for f in features {
        let j = table.schema().index_of(&f.name)?;
        let kind = &table.schema().feature(j).kind;
        if kind.is_numeric() != f.kind.is_numeric() {
            return Err(Error::KindConflict(f.name.clone()));
        }
        let col = table.column(j);
        match (&f.kind, kind) {
            (FeatureKind::Numeric, _) => {
                columns.push(
                    col.iter()
                        .map(|c| c.as_number().unwrap_or(f64::NAN))
                        .collect(),
                );
                n_levels.push(0);
            }
            (
                FeatureKind::Categorical { levels: fitted },
                FeatureKind::Categorical { levels: given },
            ) => {
                let map: Vec<f64> = given
                    .iter()
                    .map(|l| {
                        fitted
                            .iter()
                            .position(|x| x == l)
                            .map_or(-1.0, |p| p as f64)
                    })
                    .collect();
                columns.push(
                    col.iter()
                        .map(|c| match c {
                            Cell::Category(k) => map[*k as usize],
                            _ => f64::NAN,
                        })
                        .collect(),
                );
                n_levels.push(fitted.len());
            }
            _ => unreachable!(),
        }
    }
    Ok(Encoded {
        n_rows: table.n_rows(),
        columns,
        n_levels,
    })
}

impl Forest {
    /// Fit on an encoded design with explicit labels (indices into `classes`).
    pub fn fit_encoded(
        data: &Encoded,
        features: Vec<Feature>,
        labels: &[u32],
        classes: Vec<String>,
        params: &ForestParams,
        seed: u64,
    ) -> Result<Forest> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Fit("no training rows".into()));
        }
        if params.n_trees == 0 || params.min_node_size == 0 {
            return Err(Error::InvalidArgument(
                "n_trees and min_node_size must be positive".into(),
            ));
        }
        if data.columns.iter().any(|c| c.iter().any(|x| x.is_nan())) {
            return Err(Error::Fit("training data contains missing cells".into()));
        }
        let k = classes.len();
        let mut observed = vec![false; k];
        for &y in labels {
            observed[y as usize] = true;
        }
        if observed.iter().filter(|&&o| o).count() < 2 {
            let only = labels[0];
            return Ok(Forest {
                format: FOREST_FORMAT.into(),
                params: params.clone(),
                features,
                classes,
                trees: Vec::new(),
                oob: None,
                constant_class: Some(only),
                warnings: vec!["single-class training data: constant model".into()],
            });
        }

        let grow = GrowParams {
            mtry: params.resolved_mtry(data.columns.len()),
            min_node_size: params.min_node_size,
            n_classes: k,
        };
        let fitted: Vec<(Tree, Option<Vec<bool>>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng_for(seed, &[t as u64]);
                if params.bootstrap {
                    let mut inbag = vec![false; n];
                    let sample: Vec<u32> = (0..n)
                        .map(|_| {
                            let r = rng.gen_range(0..n);
                            inbag[r] = true;
                            r as u32
                        })
                        .collect();
                    (
                        Tree::grow(data, labels, sample, &grow, &mut rng),
                        Some(inbag),
                    )
                } else {
                    (
                        Tree::grow(data, labels, (0..n as u32).collect(), &grow, &mut rng),
                        None,
                    )
                }
            })
            .collect();

        let oob = params.bootstrap.then(|| {
            let mut votes = vec![0u32; n * k];
            for (tree, inbag) in &fitted {
                let inbag = inbag.as_ref().expect("bootstrap");
                for (i, &in_bag) in inbag.iter().enumerate() {
                    if in_bag {
                        continue;
                    }
                    let leaf = tree
                        .route(|f| data.get(i, f))
                        .expect("training data is complete");
                    let counts = &tree.leaf(leaf).expect("leaf").class_counts;
                    votes[i * k + majority(counts)] += 1;
                }
            }
            OobRecord {
                truth: labels.to_vec(),
                votes,
            }
        });

        Ok(Forest {
            format: FOREST_FORMAT.into(),
            params: params.clone(),
            features,
            classes,
            trees: fitted.into_iter().map(|(t, _)| t).collect(),
            oob,
            constant_class: None,
            warnings: Vec::new(),
        })
    }

    /// Assemble a forest from prebuilt trees (no out-of-bag record).
    pub fn from_trees(
        features: Vec<Feature>,
        classes: Vec<String>,
        trees: Vec<Tree>,
    ) -> Result<Forest> {
        if trees.is_empty() {
            return Err(Error::InvalidArgument(
                "forest needs at least one tree".into(),
            ));
        }
        for tree in &trees {
            for node in &tree.nodes {
                match &node.kind {
                    NodeKind::Leaf(leaf) => {
                        if leaf.class_counts.len() != classes.len() || leaf.coverage() == 0 {
                            return Err(Error::InvalidArgument(
                                "leaf class counts do not fit".into(),
                            ));
                        }
                    }
                    NodeKind::Internal { rule, left, right } => {
                        if rule.feature() >= features.len()
                            || *left as usize >= tree.nodes.len()
                            || *right as usize >= tree.nodes.len()
                        {
                            return Err(Error::InvalidArgument(
                                "internal node out of range".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(Forest {
            format: FOREST_FORMAT.into(),
            params: ForestParams {
                n_trees: trees.len(),
                ..ForestParams::learner()
            },
            features,
            classes,
            trees,
            oob: None,
            constant_class: None,
            warnings: Vec::new(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn encode(&self, table: &Table) -> Result<Encoded> {
        encode_table(table, &self.features)
    }

    pub fn predict_proba(&self, table: &Table) -> Result<PredictionMatrix> {
        let data = self.encode(table)?;
        let k = self.n_classes();
        let n = table.n_rows();
        let mut probs = vec![0.0; n * k];
        if let Some(c) = self.constant_class {
            for i in 0..n {
                probs[i * k + c as usize] = 1.0;
            }
            return PredictionMatrix::new(self.classes.clone(), probs);
        }
        let leaves = self.route_all(&data)?;
        let scale = 1.0 / self.trees.len() as f64;
        for (tree, ids) in self.trees.iter().zip(&leaves) {
            for (i, &id) in ids.iter().enumerate() {
                let counts = &tree.leaf(id).expect("leaf").class_counts;
                let total: u32 = counts.iter().sum();
                for (c, &cnt) in counts.iter().enumerate() {
                    probs[i * k + c] += scale * cnt as f64 / total as f64;
                }
            }
        }
        for row in probs.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p = (*p / s).clamp(0.0, 1.0));
        }
        PredictionMatrix::new(self.classes.clone(), probs)
    }

    fn route_all(&self, data: &Encoded) -> Result<Vec<Vec<u32>>> {
        self.trees
            .iter()
            .map(|tree| {
                (0..data.n_rows)
                    .map(|i| {
                        tree.route(|f| data.get(i, f)).map_err(|f| Error::Routing {
                            row: i,
                            feature: self.features[f].name.clone(),
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Leaf id per tree (outer) per row (inner).
    pub fn leaf_assignments(&self, table: &Table) -> Result<Vec<Vec<u32>>> {
        self.route_all(&self.encode(table)?)
    }

    pub fn oob_accuracy(&self) -> OobAccuracy {
        let Some(oob) = &self.oob else {
            return OobAccuracy {
                accuracy: f64::NAN,
                n_evaluated: 0,
                n_uncovered: 0,
            };
        };
        let k = self.n_classes();
        let mut correct = 0usize;
        let mut evaluated = 0usize;
        for (i, &truth) in oob.truth.iter().enumerate() {
            let votes = &oob.votes[i * k..(i + 1) * k];
            if votes.iter().all(|&v| v == 0) {
                continue;
            }
            evaluated += 1;
            if majority(votes) == truth as usize {
                correct += 1;
            }
        }
        OobAccuracy {
            accuracy: if evaluated == 0 {
                f64::NAN
            } else {
                correct as f64 / evaluated as f64
            },
            n_evaluated: evaluated,
            n_uncovered: oob.truth.len() - evaluated,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let forest: Forest = serde_json::from_str(text)?;
        if forest.format != FOREST_FORMAT {
            return Err(Error::Format(format!(
                "expected {FOREST_FORMAT}, found {}",
                forest.format
            )));
        }
        Ok(forest)
    }
}

/// Index of the largest count; ties go to the lowest index.
fn majority(counts: &[u32]) -> usize {
    counts
        .iter()
        .enumerate()
        .fold(
            (0, 0u32),
            |best, (c, &v)| if v > best.1 { (c, v) } else { best },
        )
        .0
}

/// Fit a classifier predicting categorical `target` from every other column.
pub fn fit_classifier(
    table: &Table,
    target: &str,
    params: &ForestParams,
    seed: u64,
) -> Result<Forest> {
    table.require_complete()?;
    let t = table.schema().index_of(target)?;
    let classes = table
        .schema()
        .feature(t)
        .kind
        .levels()
        .ok_or_else(|| Error::Schema(format!("target '{target}' must be categorical")))?
        .to_vec();
    let features: Vec<Feature> = table
        .schema()
        .features()
        .iter()
        .filter(|f| f.name != target)
        .cloned()
        .collect();
    let labels: Vec<u32> = table
        .column(t)
        .iter()
        .map(|c| c.as_category().expect("complete categorical"))
        .collect();
    let data = encode_table(table, &features)?;
    Forest::fit_encoded(&data, features, &labels, classes, params, seed)
}
