//! Between-group tests: one-way ANOVA with Tukey-Kramer post-hoc,
//! Kruskal-Wallis, and the balanced 2x2 two-way ANOVA.

use serde::{Deserialize, Serialize};

use super::dist::{chi2_sf, f_sf, ptukey_sf, t_two_sided};
use super::{average_ranks, check_finite, mean, Df, Method, StatsError, TestResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub i: usize,
    pub j: usize,
    /// mean(i) - mean(j)
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneWayResult {
    pub test: TestResult,
    pub ss_between: f64,
    pub ss_within: f64,
    pub posthoc: Vec<PairwiseComparison>,
}

fn check_groups(groups: &[Vec<f64>], min_n: usize) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::SampleSize {
            n: groups.len(),
            min: 2,
            max: usize::MAX,
        });
    }
    for g in groups {
        if g.len() < min_n {
            return Err(StatsError::SampleSize {
                n: g.len(),
                min: min_n,
                max: usize::MAX,
            });
        }
        check_finite(g)?;
    }
    Ok(())
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<OneWayResult, StatsError> {
    check_groups(groups, 2)?;
    let k = groups.len();
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let grand = groups.iter().flatten().sum::<f64>() / n_total as f64;
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    if !(ss_within > 0.0) {
        return Err(StatsError::Degenerate("no within-group variance".into()));
    }
    let df1 = (k - 1) as f64;
    let df2 = (n_total - k) as f64;
    let ms_within = ss_within / df2;
    let f = (ss_between / df1) / ms_within;
    let test = TestResult::new(
        f,
        Some(Df::Two(df1, df2)),
        f_sf(f, df1, df2),
        Method::Anova1,
    );
    let posthoc = tukey_kramer(groups, &means, ms_within, df2);
    Ok(OneWayResult {
        test,
        ss_between,
        ss_within,
        posthoc,
    })
}

fn tukey_kramer(
    groups: &[Vec<f64>],
    means: &[f64],
    ms_within: f64,
    df: f64,
) -> Vec<PairwiseComparison> {
    let k = groups.len() as f64;
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let diff = means[i] - means[j];
            let se =
                (0.5 * ms_within * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64))
                    .sqrt();
            let q = diff.abs() / se;
            out.push(PairwiseComparison {
                i,
                j,
                diff,
                q,
                p: super::clamp_p(ptukey_sf(q, k, df)),
                method: Method::Tukey,
            });
        }
    }
    out
}

/// Pooled-variance two-sample t test.
pub fn two_sample_t(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    check_groups(&[x.to_vec(), y.to_vec()], 2)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mx, my) = (mean(x), mean(y));
    let ss = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>()
        + y.iter().map(|v| (v - my).powi(2)).sum::<f64>();
    let df = nx + ny - 2.0;
    if !(ss > 0.0) {
        return Err(StatsError::Degenerate("no within-group variance".into()));
    }
    let t = (mx - my) / ((ss / df) * (1.0 / nx + 1.0 / ny)).sqrt();
    Ok(TestResult::new(
        t,
        Some(Df::One(df)),
        t_two_sided(t, df),
        Method::TwoSampleT,
    ))
}

/// Kruskal-Wallis H with tie correction, df = k - 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    check_groups(groups, 1)?;
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let (ranks, ties) = average_ranks(&all);
    let correction =
        1.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * n * n - n);
    if !(correction > 0.0) {
        return Err(StatsError::Degenerate("all values identical".into()));
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let df = (groups.len() - 1) as f64;
    Ok(TestResult::new(
        h,
        Some(Df::One(df)),
        chi2_sf(h, df),
        Method::Kruskal,
    ))
}

/// Cells of the 2x2 design. Factor A is personalization (P vs N), factor B
/// is biofeedback (B vs N).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TwoByTwo {
    pub pb: Vec<f64>,
    pub pn: Vec<f64>,
    pub nb: Vec<f64>,
    pub nn: Vec<f64>,
}

impl TwoByTwo {
    pub fn cells(&self) -> [&[f64]; 4] {
        [&self.pb, &self.pn, &self.nb, &self.nn]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let m = |v: &Vec<f64>| v.iter().map(|&x| f(x)).collect();
        Self {
            pb: m(&self.pb),
            pn: m(&self.pn),
            nb: m(&self.nb),
            nn: m(&self.nn),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Effects {
    pub a: f64,
    pub b: f64,
    pub ab: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SsTable {
    pub a: f64,
    pub b: f64,
    pub ab: f64,
    pub within: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWayResult {
    pub ss: SsTable,
    pub df: SsTable,
    pub f: Effects,
    pub p: Effects,
    pub method: Method,
}

pub fn anova_twoway_2x2(cells: &TwoByTwo) -> Result<TwoWayResult, StatsError> {
    let c = cells.cells();
    let sizes = c.map(<[f64]>::len);
    if sizes.iter().any(|&s| s != sizes[0]) {
        return Err(StatsError::Unbalanced(sizes));
    }
    let n = sizes[0];
    if n < 2 {
        return Err(StatsError::SampleSize {
            n,
            min: 2,
            max: usize::MAX,
        });
    }
    for cell in c {
        check_finite(cell)?;
    }
    let nf = n as f64;
    let m = c.map(mean);
    let [pb, pn, nb, nn] = m;
    let grand = (pb + pn + nb + nn) / 4.0;
    let a_p = (pb + pn) / 2.0;
    let a_n = (nb + nn) / 2.0;
    let b_b = (pb + nb) / 2.0;
    let b_n = (pn + nn) / 2.0;
    let ss_a = 2.0 * nf * ((a_p - grand).powi(2) + (a_n - grand).powi(2));
    let ss_b = 2.0 * nf * ((b_b - grand).powi(2) + (b_n - grand).powi(2));
    let inter = |cell: f64, a: f64, b: f64| (cell - a - b + grand).powi(2);
    let ss_ab = nf
        * (inter(pb, a_p, b_b) + inter(pn, a_p, b_n) + inter(nb, a_n, b_b) + inter(nn, a_n, b_n));
    let ss_within: f64 = c
        .iter()
        .zip(m)
        .map(|(cell, cm)| cell.iter().map(|x| (x - cm).powi(2)).sum::<f64>())
        .sum();
    let ss_total: f64 = c
        .iter()
        .flat_map(|cell| cell.iter())
        .map(|x| (x - grand).powi(2))
        .sum();
    if !(ss_within > 0.0) {
        return Err(StatsError::Degenerate("no within-cell variance".into()));
    }
    let df_within = 4.0 * (nf - 1.0);
    let ms_within = ss_within / df_within;
    let f = Effects {
        a: ss_a / ms_within,
        b: ss_b / ms_within,
        ab: ss_ab / ms_within,
    };
    let p = Effects {
        a: super::clamp_p(f_sf(f.a, 1.0, df_within)),
        b: super::clamp_p(f_sf(f.b, 1.0, df_within)),
        ab: super::clamp_p(f_sf(f.ab, 1.0, df_within)),
    };
    Ok(TwoWayResult {
        ss: SsTable {
            a: ss_a,
            b: ss_b,
            ab: ss_ab,
            within: ss_within,
            total: ss_total,
        },
        df: SsTable {
            a: 1.0,
            b: 1.0,
            ab: 1.0,
            within: df_within,
            total: 4.0 * nf - 1.0,
        },
        f,
        p,
        method: Method::Anova2,
    })
}
