//! Ridge-penalised multinomial logistic regression with a reference class.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::lbfgs;
use crate::error::{Error, Result};
use crate::prediction::PredictionMatrix;
use crate::table::{Cell, FeatureKind, Table};

pub const LR_FORMAT: &str = "arfaug-lr/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrParams {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Reference class; defaults to the first target level.
    #[serde(default)]
    pub reference: Option<String>,
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-6
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            lambda: default_lambda(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            reference: None,
        }
    }
}

/// How one input feature maps to design columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoding {
    /// One column, standardised with the fit-time mean and sd during fitting.
    Numeric { name: String, mean: f64, sd: f64 },
    /// One indicator column per level other than `reference`.
    Categorical {
        name: String,
        levels: Vec<String>,
        reference: usize,
    },
}

impl Encoding {
    pub fn name(&self) -> &str {
        match self {
            Encoding::Numeric { name, .. } | Encoding::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            Encoding::Numeric { .. } => 1,
            Encoding::Categorical { levels, .. } => levels.len() - 1,
        }
    }

    /// (level name, level index) of each indicator column.
    fn indicator_levels(&self) -> Vec<(String, usize)> {
        match self {
            Encoding::Numeric { .. } => Vec::new(),
            Encoding::Categorical {
                levels, reference, ..
            } => levels
                .iter()
                .enumerate()
                .filter(|(k, _)| k != reference)
                .map(|(k, l)| (l.clone(), k))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedLr {
    pub format: String,
    pub target: String,
    pub classes: Vec<String>,
    /// Class whose logit is pinned at zero.
    pub reference: usize,
    /// Classes seen in training; others get probability 0.
    pub present: Vec<bool>,
    pub encoding: Vec<Encoding>,
    /// Per class: intercept then one coefficient per design column, on the
    /// original feature scale. Reference and absent classes are all zero.
    pub coefficients: Vec<Vec<f64>>,
    /// Same layout on the standardised scale used during optimisation.
    pub standardized: Vec<Vec<f64>>,
    pub lambda: f64,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Penalised negative log-likelihood over a fixed design.
///
/// `x` is row-major n × d with the intercept in column 0. Parameters are laid
/// out class-major over the free classes (present, non-reference), d each.
#[derive(Clone, Debug)]
pub struct LrProblem {
    pub x: Vec<f64>,
    pub d: usize,
    pub y: Vec<usize>,
    /// Class index of each free parameter block.
    pub free: Vec<usize>,
    pub n_classes: usize,
    pub lambda: f64,
}

impl LrProblem {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_params(&self) -> usize {
        self.free.len() * self.d
    }

    /// Value and gradient at `theta`.
    pub fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = self.d;
        let m = self.free.len();
        let mut grad = vec![0.0; m * d];
        let mut value = 0.0;
        // position of each class among the free blocks
        let mut block = vec![usize::MAX; self.n_classes];
        for (b, &c) in self.free.iter().enumerate() {
            block[c] = b;
        }
        let mut eta = vec![0.0; m];
        for (i, &yi) in self.y.iter().enumerate() {
            let row = &self.x[i * d..(i + 1) * d];
            for (b, e) in eta.iter_mut().enumerate() {
                *e = row
                    .iter()
                    .zip(&theta[b * d..(b + 1) * d])
                    .map(|(a, t)| a * t)
                    .sum();
            }
            let max = eta.iter().copied().fold(0.0f64, f64::max);
            let denom = (-max).exp() + eta.iter().map(|e| (e - max).exp()).sum::<f64>();
            let lse = max + denom.ln();
            let observed = if block[yi] == usize::MAX {
                0.0
            } else {
                eta[block[yi]]
            };
            value += lse - observed;
            for b in 0..m {
                let p = (eta[b] - lse).exp();
                let r = p - (block[yi] == b) as u8 as f64;
                for (g, a) in grad[b * d..(b + 1) * d].iter_mut().zip(row) {
                    *g += r * a;
                }
            }
        }
        for b in 0..m {
            for j in 1..d {
                let t = theta[b * d + j];
                value += 0.5 * self.lambda * t * t;
                grad[b * d + j] += self.lambda * t;
            }
        }
        (value, grad)
    }
}

fn target_levels(table: &Table, target: &str) -> Result<(usize, Vec<String>)> {
    let t = table.schema().index_of(target)?;
    let levels = table
        .schema()
        .feature(t)
        .kind
        .levels()
        .ok_or_else(|| Error::Schema(format!("target '{target}' must be categorical")))?
        .to_vec();
    Ok((t, levels))
}

/// Design row for row `i` of `table` on the original scale (intercept first).
/// Returns the number of unseen categorical levels mapped to the reference.
fn design_row(
    encoding: &[Encoding],
    table: &Table,
    cols: &[usize],
    i: usize,
    out: &mut Vec<f64>,
) -> Result<usize> {
    out.clear();
    out.push(1.0);
    let mut unseen = 0;
    for (enc, &j) in encoding.iter().zip(cols) {
        match enc {
            Encoding::Numeric { name, .. } => match table.cell(i, j) {
                Cell::Number(x) => out.push(x),
                _ => {
                    return Err(Error::MissingCells {
                        row: i,
                        feature: name.clone(),
                    })
                }
            },
            Encoding::Categorical {
                name,
                levels,
                reference,
            } => {
                let level = table.level_name(i, j).ok_or_else(|| Error::MissingCells {
                    row: i,
                    feature: name.clone(),
                })?;
                let k = match levels.iter().position(|l| l == level) {
                    Some(k) => k,
                    None => {
                        unseen += 1;
                        *reference
                    }
                };
                out.extend((0..levels.len()).filter(|l| l != reference).map(|l| {
                    if l == k {
                        1.0
                    } else {
                        0.0
                    }
                }));
            }
        }
    }
    Ok(unseen)
}

fn columns_for(encoding: &[Encoding], table: &Table) -> Result<Vec<usize>> {
    encoding
        .iter()
        .map(|e| {
            let j = table.schema().index_of(e.name())?;
            if table.schema().feature(j).kind.is_numeric() != matches!(e, Encoding::Numeric { .. })
            {
                return Err(Error::KindConflict(e.name().to_string()));
            }
            Ok(j)
        })
        .collect()
}

/// Fit on every non-target column of a complete table.
pub fn fit_multinomial_lr(table: &Table, target: &str, params: &LrParams) -> Result<FittedLr> {
    if !params.lambda.is_finite() || params.lambda < 0.0 {
        return Err(Error::InvalidArgument(
            "lambda must be a finite non-negative number".into(),
        ));
    }
    table.require_complete()?;
    let n = table.n_rows();
    let (t, classes) = target_levels(table, target)?;
    let k = classes.len();
    let y: Vec<usize> = table
        .column(t)
        .iter()
        .map(|c| c.as_category().expect("complete") as usize)
        .collect();
    let mut present = vec![false; k];
    for &c in &y {
        present[c] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Fit(
            "need at least two classes in the training data".into(),
        ));
    }
    let mut warnings = Vec::new();
    let mut reference = match &params.reference {
        Some(r) => classes.iter().position(|c| c == r).ok_or_else(|| {
            Error::Config(format!(
                "reference class '{r}' is not a level of '{target}'"
            ))
        })?,
        None => 0,
    };
    for (c, _) in present.iter().enumerate().filter(|(_, p)| !**p) {
        warnings.push(format!(
            "class '{}' absent from training data: predicted probability 0",
            classes[c]
        ));
    }
    if !present[reference] {
        let pivot = present
            .iter()
            .position(|&p| p)
            .expect("two classes present");
        warnings.push(format!(
            "reference class '{}' absent from training data; using '{}'",
            classes[reference], classes[pivot]
        ));
        reference = pivot;
    }

    let mut encoding = Vec::new();
    for (j, f) in table.schema().features().iter().enumerate() {
        if j == t {
            continue;
        }
        match &f.kind {
            FeatureKind::Numeric => {
                let xs: Vec<f64> = table.column(j).iter().filter_map(Cell::as_number).collect();
                let (mean, sd) = crate::table::mean_sd(&xs);
                let sd = sd.filter(|s| *s > 0.0).unwrap_or(1.0);
                encoding.push(Encoding::Numeric {
                    name: f.name.clone(),
                    mean: mean.expect("complete"),
                    sd,
                });
            }
            FeatureKind::Categorical { levels } => {
                // first level observed in training is the encoding reference
                let counts = crate::table::level_counts(table.column(j), levels.len());
                let reference = counts.iter().position(|&c| c > 0).unwrap_or(0);
                if levels.len() > 1 {
                    encoding.push(Encoding::Categorical {
                        name: f.name.clone(),
                        levels: levels.clone(),
                        reference,
                    });
                }
            }
        }
    }
    let cols = columns_for(&encoding, table)?;
    let d = 1 + encoding.iter().map(Encoding::width).sum::<usize>();

    // standardised design
    let mut x = Vec::with_capacity(n * d);
    let mut row = Vec::with_capacity(d);
    for i in 0..n {
        design_row(&encoding, table, &cols, i, &mut row)?;
        let mut c = 1;
        for enc in &encoding {
            if let Encoding::Numeric { mean, sd, .. } = enc {
                row[c] = (row[c] - mean) / sd;
            }
            c += enc.width();
        }
        x.extend_from_slice(&row);
    }
    let free: Vec<usize> = (0..k).filter(|&c| present[c] && c != reference).collect();
    let problem = LrProblem {
        x,
        d,
        y,
        free: free.clone(),
        n_classes: k,
        lambda: params.lambda,
    };
    let result = lbfgs::minimize(
        |th| problem.evaluate(th),
        vec![0.0; problem.n_params()],
        params.max_iter,
        params.tol,
    );
    if !result.value.is_finite() {
        return Err(Error::Fit("non-finite loss".into()));
    }
    if !result.converged {
        warnings.push(format!(
            "not converged after {} iterations (gradient norm {:.3e})",
            result.iterations, result.grad_inf_norm
        ));
    }

    let mut standardized = vec![vec![0.0; d]; k];
    for (b, &c) in free.iter().enumerate() {
        standardized[c].copy_from_slice(&result.x[b * d..(b + 1) * d]);
    }
    let coefficients = standardized
        .iter()
        .map(|beta| back_transform(&encoding, beta))
        .collect();
    Ok(FittedLr {
        format: LR_FORMAT.into(),
        target: target.to_string(),
        classes,
        reference,
        present,
        encoding,
        coefficients,
        standardized,
        lambda: params.lambda,
        objective: result.value,
        grad_inf_norm: result.grad_inf_norm,
        iterations: result.iterations,
        converged: result.converged,
        warnings,
    })
}

fn back_transform(encoding: &[Encoding], beta: &[f64]) -> Vec<f64> {
    let mut out = beta.to_vec();
    let mut c = 1;
    for enc in encoding {
        if let Encoding::Numeric { mean, sd, .. } = enc {
            out[c] = beta[c] / sd;
            out[0] -= beta[c] * mean / sd;
        }
        c += enc.width();
    }
    out
}

/// Softmax over logits with `None` as structural negative infinity.
pub fn softmax(logits: &[Option<f64>]) -> Vec<f64> {
    let max = logits
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| l.map_or(0.0, |v| (v - max).exp()))
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl FittedLr {
    /// Class probabilities plus the count of unseen categorical levels that
    /// were mapped to their encoding reference.
    pub fn predict_detailed(&self, table: &Table) -> Result<(PredictionMatrix, usize)> {
        let cols = columns_for(&self.encoding, table)?;
        let mut probs = Vec::with_capacity(table.n_rows() * self.classes.len());
        let mut unseen = 0;
        let mut row = Vec::new();
        for i in 0..table.n_rows() {
            unseen += design_row(&self.encoding, table, &cols, i, &mut row)?;
            let logits: Vec<Option<f64>> = self
                .coefficients
                .iter()
                .enumerate()
                .map(|(c, beta)| {
                    self.present[c].then(|| {
                        if c == self.reference {
                            0.0
                        } else {
                            beta.iter().zip(&row).map(|(b, x)| b * x).sum()
                        }
                    })
                })
                .collect();
            probs.extend(softmax(&logits).into_iter().map(|p| p.clamp(0.0, 1.0)));
        }
        if unseen > 0 {
            log::warn!("{unseen} unseen categorical values mapped to their reference level");
        }
        Ok((PredictionMatrix::new(self.classes.clone(), probs)?, unseen))
    }

    pub fn predict_proba(&self, table: &Table) -> Result<PredictionMatrix> {
        Ok(self.predict_detailed(table)?.0)
    }

    /// Odds ratios of every non-reference, present class against the reference.
    pub fn odds_ratios(&self) -> Vec<OddsRatio> {
        let mut out = Vec::new();
        for (c, beta) in self.coefficients.iter().enumerate() {
            if c == self.reference || !self.present[c] {
                continue;
            }
            let mut col = 1;
            for enc in &self.encoding {
                match enc {
                    Encoding::Numeric { name, .. } => {
                        out.push(OddsRatio::new(&self.classes[c], name, None, beta[col]));
                    }
                    Encoding::Categorical { name, .. } => {
                        for (offset, (level, _)) in enc.indicator_levels().into_iter().enumerate() {
                            out.push(OddsRatio::new(
                                &self.classes[c],
                                name,
                                Some(level),
                                beta[col + offset],
                            ));
                        }
                    }
                }
                col += enc.width();
            }
        }
        out
    }

    pub fn reference_class(&self) -> &str {
        &self.classes[self.reference]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<FittedLr> {
        let model: FittedLr = serde_json::from_str(text)?;
        if model.format != LR_FORMAT {
            return Err(Error::Format(format!(
                "unsupported model format '{}'",
                model.format
            )));
        }
        Ok(model)
    }
}

pub fn predict_proba_lr(model: &FittedLr, table: &Table) -> Result<PredictionMatrix> {
    model.predict_proba(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub class: String,
    pub feature: String,
    /// Indicator level for categorical features; compared to the feature's
    /// encoding reference level.
    pub level: Option<String>,
    pub coefficient: f64,
    pub odds_ratio: f64,
}

impl OddsRatio {
    fn new(class: &str, feature: &str, level: Option<String>, coefficient: f64) -> Self {
        OddsRatio {
            class: class.to_string(),
            feature: feature.to_string(),
            level,
            coefficient,
            odds_ratio: coefficient.exp(),
        }
    }
}

pub fn odds_ratios(model: &FittedLr) -> Vec<OddsRatio> {
    model.odds_ratios()
}

/// CSV with columns class, feature, level, coefficient, OR.
pub fn write_odds_ratios<W: Write>(rows: &[OddsRatio], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "feature", "level", "coefficient", "OR"])?;
    for r in rows {
        w.write_record([
            r.class.as_str(),
            r.feature.as_str(),
            r.level.as_deref().unwrap_or(""),
            &crate::table::format_number(r.coefficient),
            &crate::table::format_number(r.odds_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
