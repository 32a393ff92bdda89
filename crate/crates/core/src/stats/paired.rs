//! Within-group comparisons between the stress (S2) and relaxation (S3) phases.

use serde::{Deserialize, Serialize};

use super::dist::t_two_sided;
use super::special::norm_sf;
use super::{average_ranks, check_finite, mean, variance, Df, Method, StatsError, TestResult};

/// Paired observations; differences are `after - before`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl PairedSample {
    pub fn new(before: Vec<f64>, after: Vec<f64>) -> Result<Self, StatsError> {
        if before.len() != after.len() {
            return Err(StatsError::LengthMismatch(before.len(), after.len()));
        }
        if before.len() < 2 {
            return Err(StatsError::SampleSize {
                n: before.len(),
                min: 2,
                max: usize::MAX,
            });
        }
        check_finite(&before)?;
        check_finite(&after)?;
        Ok(Self { before, after })
    }

    /// Builds a sample whose differences are exactly `d` (before = 0).
    pub fn from_differences(d: &[f64]) -> Result<Self, StatsError> {
        Self::new(vec![0.0; d.len()], d.to_vec())
    }

    pub fn differences(&self) -> Vec<f64> {
        self.before
            .iter()
            .zip(&self.after)
            .map(|(b, a)| a - b)
            .collect()
    }
}

pub fn paired_t(s: &PairedSample) -> Result<TestResult, StatsError> {
    let d = s.differences();
    let n = d.len() as f64;
    let var = variance(&d);
    if !(var > 0.0) {
        return Err(StatsError::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean(&d) / (var / n).sqrt();
    let df = n - 1.0;
    Ok(TestResult::new(
        t,
        Some(Df::One(df)),
        t_two_sided(t, df),
        Method::PairedT,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Exact up to [`EXACT_MAX_N`] nonzero differences, normal approximation above.
    #[default]
    Auto,
    Exact,
    Normal,
}

pub const EXACT_MAX_N: usize = 25;

/// Wilcoxon signed-rank test; the statistic is min(W+, W-).
pub fn wilcoxon_signed_rank(s: &PairedSample) -> Result<TestResult, StatsError> {
    wilcoxon_with(s, WilcoxonMethod::Auto)
}

pub fn wilcoxon_with(s: &PairedSample, method: WilcoxonMethod) -> Result<TestResult, StatsError> {
    let d: Vec<f64> = s.differences().into_iter().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::Degenerate(
            "all paired differences are zero".into(),
        ));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = d.len();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let exact = match method {
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
        WilcoxonMethod::Auto => n <= EXACT_MAX_N,
    };
    if exact {
        let p = exact_signed_rank_p(&ranks, w_plus);
        Ok(TestResult::new(statistic, None, p, Method::WilcoxonExact))
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
        let dev = w_plus - mu;
        let corrected = if dev.abs() >= 0.5 {
            dev - 0.5 * dev.signum()
        } else {
            0.0
        };
        let z = corrected / var.sqrt();
        Ok(TestResult::new(
            statistic,
            None,
            2.0 * norm_sf(z.abs()),
            Method::WilcoxonNormal,
        ))
    }
}

/// Exact two-sided p from the distribution of W+ over all 2^n sign
/// assignments. Ranks are doubled so tied (half-integer) ranks stay integral,
/// and the distribution is built as a subset-sum count.
fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let observed = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: u64 = counts[..=observed].iter().sum();
    let upper: u64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

/// 100 * (s3 - s2) / s2.
pub fn percent_change(s2: f64, s3: f64) -> Result<f64, StatsError> {
    if !s2.is_finite() || !s3.is_finite() {
        return Err(StatsError::NonFinite);
    }
    if s2 == 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(100.0 * (s3 - s2) / s2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_t_hand_computed() {
        let s = PairedSample::from_differences(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = paired_t(&s).unwrap();
        // mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5)/sqrt(5)) = sqrt(18)
        assert!((r.statistic - 18f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, Some(Df::One(4.0)));
        assert!((r.p - 0.0132).abs() < 5e-5, "{}", r.p);
        assert_eq!(r.method, Method::PairedT);
    }

    #[test]
    fn paired_t_degenerate() {
        let s = PairedSample::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(paired_t(&s), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn paired_t_scale_invariant() {
        let before = vec![3.0, 4.5, 2.2, 5.1, 3.3];
        let after = vec![4.0, 4.9, 3.5, 5.0, 4.4];
        let a = paired_t(&PairedSample::new(before.clone(), after.clone()).unwrap()).unwrap();
        let scale = |v: &[f64]| v.iter().map(|x| x * 7.5).collect::<Vec<_>>();
        let b = paired_t(&PairedSample::new(scale(&before), scale(&after)).unwrap()).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-12);
        assert!((a.p - b.p).abs() < 1e-12);
    }

    #[test]
    fn paired_sample_guards() {
        assert!(matches!(
            PairedSample::new(vec![1.0, 2.0], vec![1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        ));
        assert!(PairedSample::new(vec![1.0], vec![1.0]).is_err());
        assert!(PairedSample::new(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn wilcoxon_all_positive_five() {
        let s = PairedSample::from_differences(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = wilcoxon_signed_rank(&s).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p - 2.0 / 32.0).abs() < 1e-15);
        assert_eq!(r.method, Method::WilcoxonExact);
    }

    #[test]
    fn wilcoxon_symmetric_pair() {
        let s = PairedSample::from_differences(&[1.0, -1.0]).unwrap();
        assert_eq!(wilcoxon_signed_rank(&s).unwrap().p, 1.0);
    }

    #[test]
    fn wilcoxon_drops_zeros_and_rejects_all_zero() {
        let s = PairedSample::from_differences(&[0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            wilcoxon_signed_rank(&s),
            Err(StatsError::Degenerate(_))
        ));
        let with_zero = PairedSample::from_differences(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = wilcoxon_signed_rank(&with_zero).unwrap();
        assert!((r.p - 2.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_large_n_uses_normal() {
        let d: Vec<f64> = (1..=30)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 })
            .collect();
        let r = wilcoxon_signed_rank(&PairedSample::from_differences(&d).unwrap()).unwrap();
        assert_eq!(r.method, Method::WilcoxonNormal);
        assert!(r.p > 0.0 && r.p <= 1.0);
    }

    #[test]
    fn percent_change_cases() {
        assert_eq!(percent_change(100.0, 120.0).unwrap(), 20.0);
        assert_eq!(percent_change(7.3, 7.3).unwrap(), 0.0);
        assert!((percent_change(24.0, 34.2).unwrap() - 42.5).abs() < 1e-12);
        assert_eq!(percent_change(0.0, 1.0), Err(StatsError::ZeroBaseline));
    }
}
