//! Conditional leaf selection and sampling given partial evidence.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cumulative, decode, draw_index, ArfModel, FeatureDensity};
use crate::error::{Error, Result};
use crate::forest::Encoded;
use crate::seed;
use crate::table::{Cell, FeatureKind, Table};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvidenceValue {
    Number(f64),
    Level(String),
}

/// Fixed feature values to condition on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub values: Vec<(String, EvidenceValue)>,
}

impl Evidence {
    pub fn new() -> Self {
        Evidence::default()
    }

    pub fn number(mut self, feature: impl Into<String>, x: f64) -> Self {
        self.values.push((feature.into(), EvidenceValue::Number(x)));
        self
    }

    pub fn level(mut self, feature: impl Into<String>, level: impl Into<String>) -> Self {
        self.values
            .push((feature.into(), EvidenceValue::Level(level.into())));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How far the leaf filter had to be relaxed to find any admissible leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    None,
    /// No leaf region contained the evidence; bounds were ignored and leaves
    /// weighted by smoothed likelihood only.
    LikelihoodOnly,
    /// The likelihood vanished everywhere; unconditional weights were used.
    Unconditional,
}

impl Fallback {
    pub fn triggered(self) -> bool {
        self != Fallback::None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalLeaves {
    /// (index into `ArfModel::leaves`, renormalised weight), positive weights only.
    pub leaves: Vec<(usize, f64)>,
    pub fallback: Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalSample {
    pub table: Table,
    pub fallback: Fallback,
}

impl ArfModel {
    /// Resolve named evidence to (feature index, encoded value).
    fn resolve(&self, evidence: &Evidence) -> Result<Vec<(usize, f64)>> {
        evidence
            .values
            .iter()
            .map(|(name, value)| {
                let j = self.schema.index_of(name)?;
                let kind = &self.schema.feature(j).kind;
                match (kind, value) {
                    (FeatureKind::Numeric, EvidenceValue::Number(x)) if x.is_finite() => {
                        Ok((j, *x))
                    }
                    (FeatureKind::Categorical { .. }, EvidenceValue::Level(l)) => kind
                        .level_index(l)
                        .map(|k| (j, k as f64))
                        .ok_or_else(|| Error::Schema(format!("unknown level '{l}' for '{name}'"))),
                    _ => Err(Error::Schema(format!(
                        "evidence for '{name}' does not match its kind"
                    ))),
                }
            })
            .collect()
    }

    pub(crate) fn conditional_weights(&self, evidence: &[(usize, f64)]) -> ConditionalLeaves {
        if evidence.is_empty() {
            return ConditionalLeaves {
                leaves: self.leaves.iter().map(|l| l.weight).enumerate().collect(),
                fallback: Fallback::None,
            };
        }
        let strict: Vec<f64> = self
            .leaves
            .iter()
            .map(|leaf| {
                // cheap support check first; most leaves fail it
                let admissible = evidence.iter().all(|&(j, x)| match &leaf.features[j] {
                    FeatureDensity::Numeric(tn) => {
                        leaf.region[j].contains(x) && x >= tn.lower && x <= tn.upper
                    }
                    FeatureDensity::Categorical { probs, .. } => probs[x as usize] > 0.0,
                });
                if !admissible {
                    return f64::NEG_INFINITY;
                }
                let mut lw = leaf.weight.ln();
                for &(j, x) in evidence {
                    lw += match &leaf.features[j] {
                        FeatureDensity::Numeric(tn) => tn.ln_pdf_clamped(x),
                        FeatureDensity::Categorical { probs, .. } => probs[x as usize].ln(),
                    };
                }
                lw
            })
            .collect();
        if let Some(leaves) = normalise(&strict) {
            return ConditionalLeaves {
                leaves,
                fallback: Fallback::None,
            };
        }
        let relaxed: Vec<f64> = self
            .leaves
            .iter()
            .map(|leaf| {
                leaf.weight.ln()
                    + evidence
                        .iter()
                        .map(|&(j, x)| match &leaf.features[j] {
                            FeatureDensity::Numeric(tn) => tn.ln_pdf_untruncated(x),
                            FeatureDensity::Categorical { smoothed, .. } => {
                                smoothed[x as usize].ln()
                            }
                        })
                        .sum::<f64>()
            })
            .collect();
        if let Some(leaves) = normalise(&relaxed) {
            return ConditionalLeaves {
                leaves,
                fallback: Fallback::LikelihoodOnly,
            };
        }
        ConditionalLeaves {
            leaves: self.leaves.iter().map(|l| l.weight).enumerate().collect(),
            fallback: Fallback::Unconditional,
        }
    }

    /// Leaves compatible with the evidence, reweighted by its likelihood.
    pub fn conditional_leaves(&self, evidence: &Evidence) -> Result<ConditionalLeaves> {
        Ok(self.conditional_weights(&self.resolve(evidence)?))
    }

    /// Sample `m` complete rows given the evidence; evidence cells are copied verbatim.
    pub fn sample_conditional(
        &self,
        evidence: &Evidence,
        m: usize,
        seed: u64,
    ) -> Result<ConditionalSample> {
        let resolved = self.resolve(evidence)?;
        let selection = self.conditional_weights(&resolved);
        let cdf = cumulative(selection.leaves.iter().map(|(_, w)| *w));
        let p = self.schema.len();
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng_for(seed, &[i as u64]);
                let leaf = &self.leaves[selection.leaves[draw_index(&cdf, &mut rng)].0];
                let mut row: Vec<f64> = leaf.features.iter().map(|d| d.sample(&mut rng)).collect();
                for &(j, x) in &resolved {
                    row[j] = x;
                }
                row
            })
            .collect();
        let columns = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let table = decode(
            &Encoded {
                n_rows: m,
                columns,
                n_levels: Vec::new(),
            },
            &self.schema,
        )?;
        Ok(ConditionalSample {
            table,
            fallback: selection.fallback,
        })
    }

    /// Fill the NaN entries of an encoded row by one conditional draw given
    /// its observed entries.
    pub(crate) fn impute_encoded_row<R: Rng>(&self, row: &mut [f64], rng: &mut R) -> Fallback {
        let evidence: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, x)| !x.is_nan())
            .map(|(j, &x)| (j, x))
            .collect();
        if evidence.len() == row.len() {
            return Fallback::None;
        }
        let selection = self.conditional_weights(&evidence);
        let cdf = cumulative(selection.leaves.iter().map(|(_, w)| *w));
        let leaf = &self.leaves[selection.leaves[draw_index(&cdf, rng)].0];
        for (x, density) in row.iter_mut().zip(&leaf.features) {
            if x.is_nan() {
                *x = density.sample(rng);
            }
        }
        selection.fallback
    }
}

/// Exponentiate and renormalise log-weights; `None` when all are -inf.
fn normalise(log_weights: &[f64]) -> Option<Vec<(usize, f64)>> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let raw: Vec<(usize, f64)> = log_weights
        .iter()
        .enumerate()
        .filter(|(_, lw)| lw.is_finite())
        .map(|(i, lw)| (i, (lw - max).exp()))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    Some(raw.into_iter().map(|(i, w)| (i, w / total)).collect())
}

pub fn conditional_leaves(model: &ArfModel, evidence: &Evidence) -> Result<ConditionalLeaves> {
    model.conditional_leaves(evidence)
}

pub fn sample_conditional(
    model: &ArfModel,
    evidence: &Evidence,
    m: usize,
    seed: u64,
) -> Result<ConditionalSample> {
    model.sample_conditional(evidence, m, seed)
}

/// Evidence holding every observed cell of `row`.
pub fn evidence_from_row(table: &Table, row: usize) -> Evidence {
    let mut ev = Evidence::new();
    for (j, f) in table.schema().features().iter().enumerate() {
        match table.cell(row, j) {
            Cell::Missing => {}
            Cell::Number(x) => ev = ev.number(&f.name, x),
            Cell::Category(_) => ev = ev.level(&f.name, table.level_name(row, j).expect("level")),
        }
    }
    ev
}
