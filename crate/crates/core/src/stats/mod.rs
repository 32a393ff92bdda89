//! Statistical kernel for the study analysis.
//!
//! Everything here is implemented from first principles: the special
//! functions in [`special`], the CDFs in [`dist`], and the tests on top.
//! All p-values are clamped into (0, 1].

pub mod anova;
pub mod dist;
pub mod fixture;
pub mod paired;
pub mod shapiro;
pub mod special;
pub mod study;
pub mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anova::{
    anova_oneway, anova_twoway_2x2, kruskal_wallis, OneWayResult, PairwiseComparison, TwoByTwo,
    TwoWayResult,
};
pub use paired::{
    paired_t, percent_change, wilcoxon_signed_rank, wilcoxon_with, PairedSample, WilcoxonMethod,
};
pub use shapiro::shapiro_wilk;
pub use study::{analyze_study, StudyConfig, StudyReport};
pub use table::{Measure, StudyRow, StudyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Shapiro,
    PairedT,
    WilcoxonExact,
    WilcoxonNormal,
    Anova1,
    Tukey,
    Kruskal,
    Anova2,
    /// Pooled two-sample t; not part of the study pipeline.
    TwoSampleT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Df {
    One(f64),
    Two(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: Option<Df>,
    pub p: f64,
    pub method: Method,
}

impl TestResult {
    pub(crate) fn new(statistic: f64, df: Option<Df>, p: f64, method: Method) -> Self {
        Self {
            statistic,
            df,
            p: clamp_p(p),
            method,
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// Keeps p inside (0, 1].
pub fn clamp_p(p: f64) -> f64 {
    if p.is_nan() {
        return 1.0;
    }
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample size {n} outside supported range {min}..={max}")]
    SampleSize { n: usize, min: usize, max: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("unbalanced design: cell sizes {0:?}")]
    Unbalanced([usize; 4]),
    #[error("percent change undefined for a zero stress-phase value")]
    ZeroBaseline,
    #[error("table schema: {0}")]
    Schema(String),
    #[error("table row {row}: {message}")]
    Row { row: usize, message: String },
}

pub(crate) fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1).
pub(crate) fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Average ranks (1-based) with ties sharing the mean rank, plus the tie-group sizes.
pub(crate) fn average_ranks(xs: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        let (r, t) = average_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn p_clamped() {
        assert_eq!(clamp_p(0.0), f64::MIN_POSITIVE);
        assert_eq!(clamp_p(1.5), 1.0);
        assert_eq!(clamp_p(f64::NAN), 1.0);
    }
}
