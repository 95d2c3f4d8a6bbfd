//! Monte Carlo summaries with a fixed reduction order.
//!
//! Every estimator in the crate collects per-path samples in path order and
//! reduces them with [`pairwise_sum`], so results do not depend on how many
//! threads produced the samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const PAIRWISE_BLOCK: usize = 32;

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let (_, se) = mean_and_se(xs);
    se * (xs.len() as f64).sqrt()
}

/// Order-preserving parallel map over path indices.
pub(crate) fn par_map_paths<T, F>(m: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..m).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    CrudeMean,
    Importance,
    NegLogMean,
    JFunctional,
    Energy,
    EntropyProxy,
    PairedDifference,
    LeftInverse,
    Fraction,
}

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub method: EstimateMethod,
    /// Number of samples equal to +inf.
    #[serde(default)]
    pub n_infinite: usize,
    /// Set when the estimate could not be formed (e.g. every weight was zero).
    #[serde(default)]
    pub degenerate: bool,
}

impl EstimateReport {
    pub fn from_samples(samples: &[f64], method: EstimateMethod) -> Self {
        let n_infinite = samples.iter().filter(|x| **x == f64::INFINITY).count();
        if n_infinite > 0 {
            return Self {
                value: f64::INFINITY,
                std_error: f64::INFINITY,
                n_samples: samples.len(),
                method,
                n_infinite,
                degenerate: false,
            };
        }
        let (value, std_error) = mean_and_se(samples);
        Self {
            value,
            std_error,
            n_samples: samples.len(),
            method,
            n_infinite: 0,
            degenerate: false,
        }
    }

    pub fn exact(value: f64, n_samples: usize, method: EstimateMethod) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples,
            method,
            n_infinite: 0,
            degenerate: false,
        }
    }

    /// Mean of `exp(log_samples)` accumulated in log space.
    ///
    /// `-inf` entries are exact zeros. If every entry is `-inf` the report is
    /// flagged degenerate with value 0.
    pub fn from_log_samples(log_samples: &[f64], method: EstimateMethod) -> Self {
        let n = log_samples.len();
        let max = log_samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if n == 0 || max == f64::NEG_INFINITY {
            return Self {
                value: 0.0,
                std_error: 0.0,
                n_samples: n,
                method,
                n_infinite: 0,
                degenerate: true,
            };
        }
        let scaled: Vec<f64> = log_samples.iter().map(|l| (l - max).exp()).collect();
        let (m, se) = mean_and_se(&scaled);
        let scale = max.exp();
        Self {
            value: m * scale,
            std_error: se * scale,
            n_samples: n,
            method,
            n_infinite: 0,
            degenerate: false,
        }
    }

    /// `−log` of the mean of `exp(log_samples)`, computed in log space so a
    /// constant sample reproduces its value exactly. Delta-method SE.
    pub fn neg_log_mean_of_logs(log_samples: &[f64]) -> Self {
        let n = log_samples.len();
        let max = log_samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if n == 0 || max == f64::NEG_INFINITY {
            return Self {
                value: f64::INFINITY,
                std_error: f64::INFINITY,
                n_samples: n,
                method: EstimateMethod::NegLogMean,
                n_infinite: 0,
                degenerate: true,
            };
        }
        let scaled: Vec<f64> = log_samples.iter().map(|l| (l - max).exp()).collect();
        let (m, se) = mean_and_se(&scaled);
        Self {
            value: -(max + m.ln()),
            std_error: se / m,
            n_samples: n,
            method: EstimateMethod::NegLogMean,
            n_infinite: 0,
            degenerate: false,
        }
    }

    /// `-log` of a mean estimate with the delta-method standard error.
    pub fn neg_log(&self) -> Self {
        if self.degenerate || self.value <= 0.0 {
            return Self {
                value: f64::INFINITY,
                std_error: f64::INFINITY,
                n_samples: self.n_samples,
                method: EstimateMethod::NegLogMean,
                n_infinite: self.n_infinite,
                degenerate: true,
            };
        }
        Self {
            value: -self.value.ln(),
            std_error: self.std_error / self.value,
            n_samples: self.n_samples,
            method: EstimateMethod::NegLogMean,
            n_infinite: self.n_infinite,
            degenerate: false,
        }
    }

    /// Within `k` standard errors of `target` (with an absolute floor for
    /// exact estimates).
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + 1e-12
    }

    pub fn relative_sd(&self) -> f64 {
        self.std_error * (self.n_samples as f64).sqrt() / self.value.abs()
    }
}

/// Standard error of a difference of two independent estimates.
pub fn combined_se(a: &EstimateReport, b: &EstimateReport) -> f64 {
    (a.std_error * a.std_error + b.std_error * b.std_error).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}
