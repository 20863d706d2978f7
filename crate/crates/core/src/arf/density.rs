//! Univariate leaf densities: truncated normals and smoothed categoricals.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::forest::Interval;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

fn std_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Normal(mean, sd) truncated to `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    fn is_point(&self) -> bool {
        self.sd <= 0.0 || self.lower >= self.upper
    }

    fn standardized_bounds(&self) -> (f64, f64) {
        (
            (self.lower - self.mean) / self.sd,
            (self.upper - self.mean) / self.sd,
        )
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.is_point() {
            return self.mean.clamp(self.lower, self.upper);
        }
        let n = std_normal();
        let (a, b) = self.standardized_bounds();
        // sample the lower tail when the interval lies above the mean
        let (flip, a, b) = if a > 0.0 {
            (true, -b, -a)
        } else {
            (false, a, b)
        };
        let (pa, pb) = (n.cdf(a), n.cdf(b));
        let z = if pb - pa > 1e-12 {
            let u: f64 = rng.gen_range(pa..pb);
            n.inverse_cdf(u).clamp(a, b)
        } else {
            // far tail: the truncated law is nearly uniform on a tiny interval
            rng.gen_range(a..=b)
        };
        let z = if flip { -z } else { z };
        (self.mean + self.sd * z).clamp(self.lower, self.upper)
    }

    /// Log density at `x` clamped into the truncation interval.
    pub fn ln_pdf_clamped(&self, x: f64) -> f64 {
        if self.is_point() {
            return 0.0;
        }
        let n = std_normal();
        let (a, b) = self.standardized_bounds();
        let z = ((x.clamp(self.lower, self.upper)) - self.mean) / self.sd;
        let mass = if a > 0.0 {
            n.cdf(-a) - n.cdf(-b)
        } else {
            n.cdf(b) - n.cdf(a)
        };
        std_ln_pdf(z) - self.sd.ln() - mass.max(1e-300).ln()
    }

    /// Log density of the untruncated normal at `x`.
    pub fn ln_pdf_untruncated(&self, x: f64) -> f64 {
        if self.sd <= 0.0 {
            return 0.0;
        }
        std_ln_pdf((x - self.mean) / self.sd) - self.sd.ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureDensity {
    Numeric(TruncatedNormal),
    Categorical {
        /// Empirical within-leaf frequencies.
        probs: Vec<f64>,
        /// Laplace-smoothed frequencies over the levels admissible in the leaf.
        smoothed: Vec<f64>,
    },
}

impl FeatureDensity {
    pub fn categorical(counts: &[usize], allowed: &[bool]) -> Self {
        let total: usize = counts.iter().sum();
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let n_allowed = allowed.iter().filter(|&&a| a).count() as f64;
        let alpha = 1.0 / (total as f64 + n_allowed);
        let denom = total as f64 + alpha * n_allowed;
        let smoothed = counts
            .iter()
            .zip(allowed)
            .map(|(&c, &ok)| if ok { (c as f64 + alpha) / denom } else { 0.0 })
            .collect();
        FeatureDensity::Categorical { probs, smoothed }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            FeatureDensity::Numeric(tn) => tn.sample(rng),
            FeatureDensity::Categorical { probs, .. } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = 0;
                for (k, &p) in probs.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    acc += p;
                    last = k;
                    if u < acc {
                        return k as f64;
                    }
                }
                last as f64
            }
        }
    }
}

/// Density of one leaf of the final forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafDensity {
    pub tree: u32,
    pub leaf: u32,
    pub weight: f64,
    /// Real training rows in the leaf.
    pub coverage: u32,
    /// Split bounds of the leaf's region, per feature.
    pub region: Vec<Interval>,
    pub features: Vec<FeatureDensity>,
}
