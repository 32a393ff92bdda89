//! Shapiro-Wilk W with Royston's polynomial approximations for the
//! coefficients and the null distribution.

use std::f64::consts::PI;

use super::special::{norm_quantile, norm_sf};
use super::{check_finite, Df, Method, StatsError, TestResult};

pub const MIN_N: usize = 3;
pub const MAX_N: usize = 50;

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Upper-half coefficients a_1..a_{n/2} (positive, largest first).
fn coefficients(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![0.5f64.sqrt()];
    }
    let an = n as f64;
    let m: Vec<f64> = (1..=half)
        .map(|i| norm_quantile((i as f64 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;

    let mut a = vec![0.0; half];
    a[0] = a1;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for i in first..half {
        a[i] = -m[i] / fac;
    }
    a
}

/// Shapiro-Wilk normality test for 3 <= n <= 50.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult, StatsError> {
    let n = x.len();
    if !(MIN_N..=MAX_N).contains(&n) {
        return Err(StatsError::SampleSize {
            n,
            min: MIN_N,
            max: MAX_N,
        });
    }
    check_finite(x)?;
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    let scale = xs[n - 1].abs().max(xs[0].abs());
    if range <= scale * 1e-12 || range == 0.0 {
        return Err(StatsError::Degenerate("zero variance".into()));
    }
    let xs: Vec<f64> = xs.iter().map(|v| v / range).collect();

    let a = coefficients(n);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let mut sax = 0.0;
    let mut ssa = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        sax += ai * (xs[n - 1 - i] - xs[i]);
        ssa += 2.0 * ai * ai;
    }
    let ssx: f64 = xs.iter().map(|v| (v - mean).powi(2)).sum();
    let root = (ssa * ssx).sqrt();
    let w1 = (root - sax) * (root + sax) / (ssa * ssx);
    let w = (1.0 - w1).min(1.0);

    Ok(TestResult::new(
        w,
        Some(Df::One(n as f64)),
        w_pvalue(w, w1, n),
        Method::Shapiro,
    ))
}

fn w_pvalue(w: f64, w1: f64, n: usize) -> f64 {
    if n == 3 {
        let p = (6.0 / PI) * (w.sqrt().asin() - PI / 3.0);
        return p.max(0.0);
    }
    let an = n as f64;
    let mut y = w1.ln();
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return 1e-99;
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let ln_n = an.ln();
        (poly(&C5, ln_n), poly(&C6, ln_n).exp())
    };
    norm_sf((y - m) / s)
}
