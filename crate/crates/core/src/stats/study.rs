//! The full analysis: normality screening, within-group tests, change scores,
//! between-group tests and the 2x2 model, for each measure.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::anova::{anova_oneway, anova_twoway_2x2, kruskal_wallis, TwoWayResult};
use super::paired::{paired_t, percent_change, wilcoxon_signed_rank, PairedSample};
use super::shapiro::shapiro_wilk;
use super::table::{ChangeKind, Group, Measure, StudyTable};
use super::{mean, variance, Method, StatsError, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub alpha: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        let sd = if xs.len() > 1 {
            variance(xs).sqrt()
        } else {
            0.0
        };
        Self {
            n: xs.len(),
            mean: if xs.is_empty() { f64::NAN } else { mean(xs) },
            sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: Group,
    pub s2: Summary,
    pub s3: Summary,
    pub change: Summary,
    /// Normality of the S3 - S2 differences.
    pub shapiro: Option<TestResult>,
    pub within: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledComparison {
    pub a: Group,
    pub b: Group,
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenReport {
    pub test: TestResult,
    pub posthoc: Vec<LabeledComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: Measure,
    pub change_kind: ChangeKind,
    pub groups: Vec<GroupReport>,
    pub between: Option<BetweenReport>,
    pub two_way: Option<TwoWayResult>,
    pub notes: Vec<String>,
}

impl MeasureReport {
    pub fn interaction_significant(&self, alpha: f64) -> bool {
        self.two_way.as_ref().is_some_and(|t| t.p.ab < alpha)
    }

    pub fn biofeedback_significant(&self, alpha: f64) -> bool {
        self.two_way.as_ref().is_some_and(|t| t.p.b < alpha)
    }

    pub fn personalization_significant(&self, alpha: f64) -> bool {
        self.two_way.as_ref().is_some_and(|t| t.p.a < alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub alpha: f64,
    pub n_rows: usize,
    pub cell_counts: [usize; 4],
    pub measures: Vec<MeasureReport>,
}

impl StudyReport {
    pub fn measure(&self, m: Measure) -> Option<&MeasureReport> {
        self.measures.iter().find(|r| r.measure == m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn analyze_study(table: &StudyTable, cfg: &StudyConfig) -> Result<StudyReport, StatsError> {
    analyze_measures(table, cfg, &Measure::ALL)
}

pub fn analyze_measures(
    table: &StudyTable,
    cfg: &StudyConfig,
    measures: &[Measure],
) -> Result<StudyReport, StatsError> {
    let counts = table.cell_counts();
    if let Some(g) = Group::ALL.into_iter().find(|g| counts[g.index()] < 2) {
        return Err(StatsError::Schema(format!(
            "cell {g} has {} row(s), need at least 2",
            counts[g.index()]
        )));
    }
    for (i, row) in table.rows.iter().enumerate() {
        for m in Measure::ALL {
            let (a, b) = row.pair(m);
            if !a.is_finite() || !b.is_finite() {
                return Err(StatsError::Row {
                    row: i + 1,
                    message: format!("non-finite {m} value"),
                });
            }
        }
    }
    Ok(StudyReport {
        alpha: cfg.alpha,
        n_rows: table.rows.len(),
        cell_counts: counts,
        measures: measures
            .iter()
            .map(|&m| analyze_measure(table, cfg, m))
            .collect(),
    })
}

fn note(notes: &mut Vec<String>, what: &str, e: &StatsError) {
    notes.push(format!("{what}: {e}"));
}

fn analyze_measure(table: &StudyTable, cfg: &StudyConfig, m: Measure) -> MeasureReport {
    let mut notes = Vec::new();
    let kind = m.change_kind();
    let mut groups = Vec::new();
    let mut changes: Vec<Vec<f64>> = Vec::new();
    let mut changes_normal = true;

    for g in Group::ALL {
        let (s2, s3): (Vec<f64>, Vec<f64>) = table.rows_in(g).map(|r| r.pair(m)).unzip();
        let mut change = Vec::with_capacity(s2.len());
        for (r, (&a, &b)) in table.rows_in(g).zip(s2.iter().zip(&s3)) {
            match kind {
                ChangeKind::Absolute => change.push(b - a),
                ChangeKind::Percent => match percent_change(a, b) {
                    Ok(c) => change.push(c),
                    Err(e) => note(&mut notes, &format!("{g} {} excluded", r.pid), &e),
                },
            }
        }

        let diffs: Vec<f64> = s2.iter().zip(&s3).map(|(a, b)| b - a).collect();
        let shapiro = match shapiro_wilk(&diffs) {
            Ok(t) => Some(t),
            Err(e) => {
                note(&mut notes, &format!("{g} normality"), &e);
                None
            }
        };
        let normal = shapiro.as_ref().is_some_and(|t| t.p > cfg.alpha);
        let within = PairedSample::new(s2.clone(), s3.clone()).and_then(|s| {
            if normal {
                paired_t(&s)
            } else {
                wilcoxon_signed_rank(&s)
            }
        });
        let within = match within {
            Ok(t) => Some(t),
            Err(e) => {
                note(&mut notes, &format!("{g} within-group test"), &e);
                None
            }
        };

        // The between-group choice depends on the distribution of the
        // change scores actually compared.
        let change_normal = match kind {
            ChangeKind::Absolute => normal,
            ChangeKind::Percent => shapiro_wilk(&change).is_ok_and(|t| t.p > cfg.alpha),
        };
        changes_normal &= change_normal;

        groups.push(GroupReport {
            group: g,
            s2: Summary::of(&s2),
            s3: Summary::of(&s3),
            change: Summary::of(&change),
            shapiro,
            within,
        });
        changes.push(change);
    }

    let posthoc = match anova_oneway(&changes) {
        Ok(r) => Ok(r),
        Err(e) => {
            note(&mut notes, "one-way ANOVA", &e);
            Err(())
        }
    };
    let between = if changes_normal {
        posthoc.as_ref().ok().map(|r| (r.test.clone(), r))
    } else {
        match kruskal_wallis(&changes) {
            Ok(t) => posthoc.as_ref().ok().map(|r| (t, r)),
            Err(e) => {
                note(&mut notes, "Kruskal-Wallis", &e);
                None
            }
        }
    }
    .map(|(test, r)| BetweenReport {
        test,
        posthoc: r
            .posthoc
            .iter()
            .map(|c| LabeledComparison {
                a: Group::ALL[c.i],
                b: Group::ALL[c.j],
                diff: c.diff,
                q: c.q,
                p: c.p,
                method: c.method,
            })
            .collect(),
    });

    let cells = super::anova::TwoByTwo {
        pb: changes[0].clone(),
        pn: changes[1].clone(),
        nb: changes[2].clone(),
        nn: changes[3].clone(),
    };
    let two_way = match anova_twoway_2x2(&cells) {
        Ok(r) => Some(r),
        Err(e) => {
            note(&mut notes, "two-way ANOVA", &e);
            None
        }
    };

    MeasureReport {
        measure: m,
        change_kind: kind,
        groups,
        between,
        two_way,
        notes,
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Shapiro => "Shapiro-Wilk",
        Method::PairedT => "paired t",
        Method::WilcoxonExact => "Wilcoxon (exact)",
        Method::WilcoxonNormal => "Wilcoxon (normal)",
        Method::Anova1 => "one-way ANOVA",
        Method::Tukey => "Tukey HSD",
        Method::Kruskal => "Kruskal-Wallis",
        Method::Anova2 => "two-way ANOVA",
        Method::TwoSampleT => "two-sample t",
    }
}

/// Plain-text rendering of a report.
pub fn render_text(r: &StudyReport) -> String {
    let mut s = String::new();
    let [pb, pn, nb, nn] = r.cell_counts;
    let _ = writeln!(
        s,
        "rows: {}  (PB {pb}, PN {pn}, NB {nb}, NN {nn})  alpha {}",
        r.n_rows, r.alpha
    );
    for m in &r.measures {
        let unit = match m.change_kind {
            ChangeKind::Percent => "% change",
            ChangeKind::Absolute => "change",
        };
        let _ = writeln!(s, "\n== {} ({unit}) ==", m.measure);
        let _ = writeln!(
            s,
            "{:<4} {:>3} {:>18} {:>18} {:>18}  {:<18} {:>8} {:>7}",
            "grp", "n", "S2", "S3", unit, "within test", "stat", "p"
        );
        for g in &m.groups {
            let (name, stat, p) = match &g.within {
                Some(t) => (
                    method_name(t.method),
                    format!("{:.3}", t.statistic),
                    fmt_p(t.p),
                ),
                None => ("-", "-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{:<4} {:>3} {:>18} {:>18} {:>18}  {:<18} {:>8} {:>7}",
                g.group.label(),
                g.s2.n,
                format!("{:.2} ± {:.2}", g.s2.mean, g.s2.sd),
                format!("{:.2} ± {:.2}", g.s3.mean, g.s3.sd),
                format!("{:.2} ± {:.2}", g.change.mean, g.change.sd),
                name,
                stat,
                p
            );
        }
        if let Some(b) = &m.between {
            let df = match b.test.df {
                Some(super::Df::Two(a, c)) => format!("({a}, {c})"),
                Some(super::Df::One(a)) => format!("({a})"),
                None => String::new(),
            };
            let _ = writeln!(
                s,
                "between groups: {} {df} = {:.3}, p = {}",
                method_name(b.test.method),
                b.test.statistic,
                fmt_p(b.test.p)
            );
            for c in &b.posthoc {
                let _ = writeln!(
                    s,
                    "  {} vs {}: diff {:.2}, q {:.3}, p = {}",
                    c.a,
                    c.b,
                    c.diff,
                    c.q,
                    fmt_p(c.p)
                );
            }
        }
        if let Some(t) = &m.two_way {
            let w = t.df.within;
            for (name, f, p) in [
                ("personalization", t.f.a, t.p.a),
                ("biofeedback", t.f.b, t.p.b),
                ("interaction", t.f.ab, t.p.ab),
            ] {
                let _ = writeln!(s, "{name:<16} F(1, {w}) = {f:.3}, p = {}", fmt_p(p));
            }
        }
        for n in &m.notes {
            let _ = writeln!(s, "note: {n}");
        }
    }
    s
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-group bar and box summaries of the change scores, one CSV per measure.
pub fn plot_csv(table: &StudyTable, m: Measure) -> String {
    let mut s = String::from("measure,group,n,mean,sd,min,q1,median,q3,max\n");
    for g in Group::ALL {
        let mut xs: Vec<f64> = table
            .rows_in(g)
            .filter_map(|r| {
                let (a, b) = r.pair(m);
                match m.change_kind() {
                    ChangeKind::Absolute => Some(b - a),
                    ChangeKind::Percent => percent_change(a, b).ok(),
                }
            })
            .collect();
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        let sm = Summary::of(&xs);
        let _ = writeln!(
            s,
            "{m},{g},{},{},{},{},{},{},{},{}",
            sm.n,
            sm.mean,
            sm.sd,
            xs[0],
            quantile(&xs, 0.25),
            quantile(&xs, 0.5),
            quantile(&xs, 0.75),
            xs[xs.len() - 1]
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::table::StudyRow;

    fn row(pid: usize, g: Group, v: f64) -> StudyRow {
        StudyRow {
            pid: format!("p{pid:02}"),
            pers: g.personalization(),
            bio: g.biofeedback(),
            sdnn_s2: v,
            sdnn_s3: v,
            res_s2: v,
            res_s3: v,
            rrs_s2: v,
            rrs_s3: v,
            stai_s2: v,
            stai_s3: v,
            fss: None,
            relevance: None,
            ipq_gp: None,
            ipq_sp: None,
            ipq_inv: None,
            ipq_real: None,
        }
    }

    #[test]
    fn all_equal_dataset_is_quiet() {
        let rows = (0..12).map(|i| row(i, Group::ALL[i % 4], 10.0)).collect();
        let t = StudyTable { rows };
        let r = analyze_study(&t, &StudyConfig::default()).unwrap();
        for m in &r.measures {
            assert!(!m.interaction_significant(0.05));
            assert!(!m.biofeedback_significant(0.05));
            assert!(m.between.is_none());
            assert!(!m.notes.is_empty());
        }
        assert!(!render_text(&r).is_empty());
    }

    #[test]
    fn too_few_rows_per_cell() {
        let rows = (0..4).map(|i| row(i, Group::ALL[i], 10.0)).collect();
        assert!(matches!(
            analyze_study(&StudyTable { rows }, &StudyConfig::default()),
            Err(StatsError::Schema(_))
        ));
    }

    #[test]
    fn quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }
}
