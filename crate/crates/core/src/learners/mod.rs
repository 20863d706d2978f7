//! Classifiers behind one fit / predict-probabilities interface.
//!
//! A third learner plugs in by adding a [`LearnerSpec`] variant, a
//! [`FittedLearner`] variant and its [`Classifier`] impl.

pub mod lbfgs;
mod lr;

pub use lr::{
    fit_multinomial_lr, odds_ratios, predict_proba_lr, softmax, write_odds_ratios, Encoding,
    FittedLr, LrParams, LrProblem, OddsRatio, LR_FORMAT,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_classifier, Forest, ForestParams};
use crate::prediction::PredictionMatrix;
use crate::table::Table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    MultinomialLr(LrParams),
    RandomForest(ForestParams),
}

impl LearnerSpec {
    pub fn lr() -> Self {
        LearnerSpec::MultinomialLr(LrParams::default())
    }

    pub fn rf() -> Self {
        LearnerSpec::RandomForest(ForestParams::learner())
    }

    /// Short label used in result files.
    pub fn label(&self) -> &'static str {
        match self {
            LearnerSpec::MultinomialLr(_) => "LR",
            LearnerSpec::RandomForest(_) => "RF",
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("learner spec: {e}")))
    }

    /// Fit on every column of `table` except `target`.
    pub fn fit(&self, table: &Table, target: &str, seed: u64) -> Result<FittedLearner> {
        match self {
            LearnerSpec::MultinomialLr(p) => {
                Ok(FittedLearner::Lr(fit_multinomial_lr(table, target, p)?))
            }
            LearnerSpec::RandomForest(p) => {
                Ok(FittedLearner::Rf(fit_classifier(table, target, p, seed)?))
            }
        }
    }
}

pub trait Classifier {
    fn classes(&self) -> &[String];
    fn predict_proba(&self, table: &Table) -> Result<PredictionMatrix>;
}

impl Classifier for FittedLr {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn predict_proba(&self, table: &Table) -> Result<PredictionMatrix> {
        FittedLr::predict_proba(self, table)
    }
}

impl Classifier for Forest {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn predict_proba(&self, table: &Table) -> Result<PredictionMatrix> {
        Forest::predict_proba(self, table)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum FittedLearner {
    Lr(FittedLr),
    Rf(Forest),
}

impl FittedLearner {
    pub fn warnings(&self) -> &[String] {
        match self {
            FittedLearner::Lr(m) => &m.warnings,
            FittedLearner::Rf(f) => &f.warnings,
        }
    }

    /// Probabilities plus a count of unseen categorical values at prediction time.
    pub fn predict_detailed(&self, table: &Table) -> Result<(PredictionMatrix, usize)> {
        match self {
            FittedLearner::Lr(m) => m.predict_detailed(table),
            FittedLearner::Rf(f) => Ok((f.predict_proba(table)?, 0)),
        }
    }

    pub fn as_lr(&self) -> Option<&FittedLr> {
        match self {
            FittedLearner::Lr(m) => Some(m),
            FittedLearner::Rf(_) => None,
        }
    }
}

impl Classifier for FittedLearner {
    fn classes(&self) -> &[String] {
        match self {
            FittedLearner::Lr(m) => &m.classes,
            FittedLearner::Rf(f) => &f.classes,
        }
    }

    fn predict_proba(&self, table: &Table) -> Result<PredictionMatrix> {
        Ok(self.predict_detailed(table)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_shapes() {
        let lr = LearnerSpec::from_json(r#"{"kind": "multinomial_lr", "lambda": 0.5}"#).unwrap();
        assert_eq!(
            lr,
            LearnerSpec::MultinomialLr(LrParams {
                lambda: 0.5,
                ..LrParams::default()
            })
        );
        let rf = LearnerSpec::from_json(
            r#"{"kind": "random_forest", "n_trees": 10, "min_node_size": 1, "bootstrap": true}"#,
        )
        .unwrap();
        assert_eq!(rf.label(), "RF");
        assert!(matches!(
            LearnerSpec::from_json(r#"{"kind": "tabpfn"}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            LearnerSpec::from_json(r#"{"kind": "multinomial_lr", "lamda": 1}"#),
            Err(Error::Config(_))
        ));
    }
}
