//! Cross-validation plans, classification metrics, permutation feature
//! importance and aggregation of fold results.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Classifier;
use crate::prediction::PredictionMatrix;
use crate::seed;
use crate::table::Table;

/// Fold assignment for every row in every repetition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplingPlan {
    pub k: usize,
    pub repetitions: usize,
    pub stratified: bool,
    pub seed: u64,
    /// `assignments[r][i]` is the test fold of row `i` in repetition `r`.
    pub assignments: Vec<Vec<usize>>,
}

impl ResamplingPlan {
    pub fn n_rows(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    pub fn test_rows(&self, repetition: usize, fold: usize) -> Vec<usize> {
        self.assignments[repetition]
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_rows(&self, repetition: usize, fold: usize) -> Vec<usize> {
        self.assignments[repetition]
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self, repetition: usize) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments[repetition] {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assign rows to `k` folds for each of `repetitions` repetitions.
///
/// Stratified plans shuffle each class's rows and deal them round-robin,
/// continuing the fold counter from one class to the next so that overall
/// fold sizes differ by at most one.
pub fn make_folds(
    labels: &[u32],
    k: usize,
    repetitions: usize,
    stratified: bool,
    seed: u64,
) -> Result<ResamplingPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::InvalidArgument("k must be at least 2".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {n} rows"
        )));
    }
    if repetitions == 0 {
        return Err(Error::InvalidArgument(
            "at least one repetition is required".into(),
        ));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let assignments = (0..repetitions)
        .map(|r| {
            let mut rng = seed::rng_for(seed, &[r as u64]);
            let mut fold = vec![0; n];
            let groups: Vec<Vec<usize>> = if stratified {
                (0..n_classes)
                    .map(|c| (0..n).filter(|&i| labels[i] as usize == c).collect())
                    .collect()
            } else {
                vec![(0..n).collect()]
            };
            let mut offset = 0;
            for mut rows in groups {
                rows.shuffle(&mut rng);
                for (i, row) in rows.iter().enumerate() {
                    fold[*row] = (offset + i) % k;
                }
                offset += rows.len();
            }
            fold
        })
        .collect();
    Ok(ResamplingPlan {
        k,
        repetitions,
        stratified,
        seed,
        assignments,
    })
}

fn check_lengths(pred: &PredictionMatrix, truth: &[u32]) -> Result<()> {
    if pred.n_rows() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            pred.n_rows(),
            truth.len()
        )));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t as usize >= pred.n_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside the class list"
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &PredictionMatrix, truth: &[u32]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no rows to score".into()));
    }
    let correct = pred
        .argmax()
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p == **t as usize)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

pub fn class_support(n_classes: usize, truth: &[u32]) -> Vec<usize> {
    let mut support = vec![0; n_classes];
    for &t in truth {
        support[t as usize] += 1;
    }
    support
}

/// Per-class recall; `None` for classes without support.
pub fn class_wise_accuracy(pred: &PredictionMatrix, truth: &[u32]) -> Result<Vec<Option<f64>>> {
    check_lengths(pred, truth)?;
    let support = class_support(pred.n_classes(), truth);
    let mut correct = vec![0usize; pred.n_classes()];
    for (p, &t) in pred.argmax().iter().zip(truth) {
        if *p == t as usize {
            correct[*p] += 1;
        }
    }
    Ok(support
        .iter()
        .zip(&correct)
        .map(|(&s, &c)| (s > 0).then(|| c as f64 / s as f64))
        .collect())
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC of `scores` for the rows flagged positive.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// One-vs-rest AUC per class; `None` where a class has no positives or no negatives.
pub fn auc_ovr_per_class(pred: &PredictionMatrix, truth: &[u32]) -> Result<Vec<Option<f64>>> {
    check_lengths(pred, truth)?;
    Ok((0..pred.n_classes())
        .map(|c| {
            let scores: Vec<f64> = pred.rows().map(|r| r[c]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t as usize == c).collect();
            binary_auc(&scores, &positive)
        })
        .collect())
}

/// Macro average of the defined one-vs-rest AUCs; `None` with fewer than
/// two supported classes.
pub fn auc_macro_ovr(pred: &PredictionMatrix, truth: &[u32]) -> Result<Option<f64>> {
    let per_class = auc_ovr_per_class(pred, truth)?;
    let supported = class_support(pred.n_classes(), truth)
        .iter()
        .filter(|&&s| s > 0)
        .count();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if supported < 2 || defined.is_empty() {
        return Ok(None);
    }
    Ok(Some(defined.iter().sum::<f64>() / defined.len() as f64))
}

pub fn brier(pred: &PredictionMatrix, truth: &[u32]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no rows to score".into()));
    }
    let total: f64 = pred
        .rows()
        .zip(truth)
        .map(|(row, &t)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let target = if k == t as usize { 1.0 } else { 0.0 };
                    (p - target).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / truth.len() as f64)
}

pub const LOG_LOSS_CLIP: f64 = 1e-15;

pub fn log_loss(pred: &PredictionMatrix, truth: &[u32]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no rows to score".into()));
    }
    let total: f64 = pred
        .rows()
        .zip(truth)
        .map(|(row, &t)| {
            -row[t as usize]
                .clamp(LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP)
                .ln()
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// Metric values of one fold; `auc` is `None` when undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub brier: f64,
    pub log_loss: f64,
    pub class_accuracy: Vec<Option<f64>>,
    pub class_support: Vec<usize>,
}

impl Metrics {
    pub fn compute(pred: &PredictionMatrix, truth: &[u32]) -> Result<Metrics> {
        Ok(Metrics {
            accuracy: accuracy(pred, truth)?,
            auc: auc_macro_ovr(pred, truth)?,
            brier: brier(pred, truth)?,
            log_loss: log_loss(pred, truth)?,
            class_accuracy: class_wise_accuracy(pred, truth)?,
            class_support: class_support(pred.n_classes(), truth),
        })
    }

    /// (name, value) for the scalar metrics in a fixed order.
    pub fn scalars(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("accuracy", Some(self.accuracy)),
            ("auc", self.auc),
            ("brier", Some(self.brier)),
            ("log_loss", Some(self.log_loss)),
        ]
    }
}

/// Error measure for permutation importance; lower is better.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    #[default]
    LogLoss,
    Brier,
    Misclassification,
}

impl ErrorMetric {
    pub fn error(self, pred: &PredictionMatrix, truth: &[u32]) -> Result<f64> {
        match self {
            ErrorMetric::LogLoss => log_loss(pred, truth),
            ErrorMetric::Brier => brier(pred, truth),
            ErrorMetric::Misclassification => Ok(1.0 - accuracy(pred, truth)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfiResult {
    pub metric: ErrorMetric,
    pub base_error: f64,
    pub n_permutations: usize,
    pub features: Vec<FeatureImportance>,
}

/// Mean error increase when each of `features` is shuffled within `test`.
pub fn pfi(
    model: &dyn Classifier,
    test: &Table,
    truth: &[u32],
    features: &[&str],
    metric: ErrorMetric,
    n_permutations: usize,
    seed: u64,
) -> Result<PfiResult> {
    if n_permutations < 1 {
        return Err(Error::InvalidArgument(
            "n_permutations must be at least 1".into(),
        ));
    }
    let base_error = metric.error(&model.predict_proba(test)?, truth)?;
    let mut out = Vec::with_capacity(features.len());
    for name in features {
        let j = test.schema().index_of(name)?;
        let column = test.column(j).to_vec();
        let mut rng = seed::rng_for(seed, &[seed::label_id(name)]);
        // all permutations go through one batched prediction
        let permuted = (0..n_permutations)
            .map(|_| {
                let mut shuffled = column.clone();
                shuffled.shuffle(&mut rng);
                test.replace_column(j, shuffled)
            })
            .collect::<Result<Vec<Table>>>()?;
        let batch = crate::table::stack(&permuted.iter().collect::<Vec<_>>())?;
        let probs = model.predict_proba(&batch)?;
        let n = test.n_rows();
        let increases = (0..n_permutations)
            .map(|r| Ok(metric.error(&probs.slice_rows(r * n, (r + 1) * n), truth)? - base_error))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, sd) = crate::table::mean_sd(&increases);
        out.push(FeatureImportance {
            feature: name.to_string(),
            importance: mean.expect("at least one permutation"),
            sd: sd.unwrap_or(0.0),
        });
    }
    Ok(PfiResult {
        metric,
        base_error,
        n_permutations,
        features: out,
    })
}

/// Mean and sample SD over the defined values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
    pub n_undefined: usize,
}

pub fn summarize(values: &[Option<f64>]) -> Summary {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let (mean, sd) = crate::table::mean_sd(&defined);
    let constant = defined.windows(2).all(|w| w[0] == w[1]);
    Summary {
        mean: if constant {
            defined.first().copied()
        } else {
            mean
        },
        sd: match defined.len() {
            0 | 1 => None,
            _ if constant => Some(0.0),
            _ => sd,
        },
        n: defined.len(),
        n_undefined: values.len() - defined.len(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean and SD over every repetition × fold value.
    #[default]
    Pooled,
    /// Average folds within each repetition first, then summarise repetitions.
    PerRepetition,
}

/// Metrics of one learner under one augmentation method on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repetition: usize,
    pub fold: usize,
    pub method: String,
    pub learner: String,
    pub metrics: Metrics,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub learner: String,
    /// Metric name; class-wise accuracy appears as `class_accuracy:<class>`.
    pub metric: String,
    pub summary: Summary,
}

/// Summaries per (method, learner, metric), sorted by those keys.
pub fn aggregate(
    results: &[FoldResult],
    classes: &[String],
    mode: Aggregation,
) -> Vec<AggregateRow> {
    // (method, learner, metric) -> (repetition, value)
    type Groups = BTreeMap<(String, String, String), Vec<(usize, Option<f64>)>>;
    let mut groups = Groups::new();
    for r in results {
        let mut push = |metric: String, v: Option<f64>| {
            groups
                .entry((r.method.clone(), r.learner.clone(), metric))
                .or_default()
                .push((r.repetition, v));
        };
        for (name, v) in r.metrics.scalars() {
            push(name.to_string(), v);
        }
        for (c, v) in r.metrics.class_accuracy.iter().enumerate() {
            push(format!("class_accuracy:{}", classes[c]), *v);
        }
    }
    groups
        .into_iter()
        .map(|((method, learner, metric), values)| {
            let summary = match mode {
                Aggregation::Pooled => summarize(&values.iter().map(|v| v.1).collect::<Vec<_>>()),
                Aggregation::PerRepetition => {
                    let mut per_rep: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
                    for (rep, v) in &values {
                        per_rep.entry(*rep).or_default().push(*v);
                    }
                    let n_undefined = values.iter().filter(|v| v.1.is_none()).count();
                    let means: Vec<Option<f64>> =
                        per_rep.values().map(|vs| summarize(vs).mean).collect();
                    Summary {
                        n_undefined,
                        ..summarize(&means)
                    }
                }
            };
            AggregateRow {
                method,
                learner,
                metric,
                summary,
            }
        })
        .collect()
}
