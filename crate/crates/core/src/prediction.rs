use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major n × K class-probability matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    classes: Vec<String>,
    probs: Vec<f64>,
}

impl PredictionMatrix {
    pub fn new(classes: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        let k = classes.len();
        if k == 0 || !probs.len().is_multiple_of(k) {
            return Err(Error::InvalidArgument(format!(
                "{} probabilities do not fill rows of {k} classes",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probability outside [0, 1]".into()));
        }
        Ok(PredictionMatrix { classes, probs })
    }

    pub fn from_rows(classes: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        PredictionMatrix::new(classes, rows.concat())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_rows(&self) -> usize {
        self.probs.len() / self.classes.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.classes.len();
        &self.probs[i * k..(i + 1) * k]
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> PredictionMatrix {
        let k = self.classes.len();
        PredictionMatrix {
            classes: self.classes.clone(),
            probs: self.probs[start * k..end * k].to_vec(),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.classes.len())
    }

    /// Predicted class per row; ties go to the earlier class.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &p)| {
                        if p > best.1 {
                            (k, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}
