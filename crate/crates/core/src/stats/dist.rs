//! Distribution functions used by the tests.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use super::special::{beta_inc, gamma_q, gauss_legendre, ln_gamma, norm_cdf};

/// Student t CDF.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    let tail = 0.5 * beta_inc(0.5 * df, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_inc(0.5 * df, 0.5, df / (df + t * t))
}

pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    beta_inc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
}

/// Upper tail of the F distribution, computed without cancellation.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    beta_inc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))
}

pub fn chi2_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * k, 0.5 * x)
}

struct Nodes {
    range_x: Vec<f64>,
    range_w: Vec<f64>,
    outer_x: Vec<f64>,
    outer_w: Vec<f64>,
}

fn nodes() -> &'static Nodes {
    static NODES: OnceLock<Nodes> = OnceLock::new();
    NODES.get_or_init(|| {
        let (range_x, range_w) = gauss_legendre(12);
        let (outer_x, outer_w) = gauss_legendre(16);
        Nodes {
            range_x,
            range_w,
            outer_x,
            outer_w,
        }
    })
}

/// P(range of `cc` standard normals < w), Hartley's form integrated by
/// Gauss-Legendre quadrature on (w/2, 8).
fn range_prob(w: f64, cc: f64) -> f64 {
    const UPPER: f64 = 8.0;
    let half = 0.5 * w;
    if half >= UPPER {
        return 1.0;
    }
    let mut pr_w = 2.0 * norm_cdf(half) - 1.0;
    pr_w = if pr_w >= (-50.0 / cc).exp() {
        pr_w.powf(cc)
    } else {
        0.0
    };

    let n_intervals = if w > 3.0 { 2 } else { 3 };
    let step = (UPPER - half) / n_intervals as f64;
    let n = nodes();
    let mut lo = half;
    let mut integral = 0.0;
    for _ in 0..n_intervals {
        let hi = lo + step;
        let mid = 0.5 * (lo + hi);
        let rad = 0.5 * (hi - lo);
        let mut sum = 0.0;
        for (&x, &wt) in n.range_x.iter().zip(&n.range_w) {
            let u = mid + rad * x;
            let u2 = u * u;
            if u2 > 60.0 {
                continue;
            }
            let inner = norm_cdf(u) - norm_cdf(u - w);
            if inner >= (-30.0 / (cc - 1.0)).exp() {
                sum += wt * (-0.5 * u2).exp() * inner.powf(cc - 1.0);
            }
        }
        integral += sum * 2.0 * rad * cc / (2.0 * PI).sqrt();
        lo = hi;
    }
    let total = pr_w + integral;
    total.clamp(0.0, 1.0)
}

/// CDF of the studentized range distribution with `k` groups and `df` degrees of freedom.
pub fn ptukey(q: f64, k: f64, df: f64) -> f64 {
    if q.is_nan() || k < 2.0 || df < 2.0 {
        return f64::NAN;
    }
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if df > 25_000.0 {
        return range_prob(q, k);
    }

    let f2 = 0.5 * df;
    let mut lead = f2 * df.ln() - df * LN_2 - ln_gamma(f2);
    let f21 = f2 - 1.0;
    let ff4 = 0.25 * df;
    let ulen: f64 = if df <= 100.0 {
        1.0
    } else if df <= 800.0 {
        0.5
    } else if df <= 5000.0 {
        0.25
    } else {
        0.125
    };
    lead += ulen.ln();

    let n = nodes();
    let mut ans = 0.0;
    for i in 1..=50 {
        let mid = (2 * i - 1) as f64 * ulen;
        let mut chunk = 0.0;
        for (&x, &wt) in n.outer_x.iter().zip(&n.outer_w) {
            let s = mid + x * ulen;
            let t1 = lead + f21 * s.ln() - s * ff4;
            if t1 >= -30.0 {
                let qs = q * (0.5 * s).sqrt();
                chunk += range_prob(qs, k) * wt * t1.exp();
            }
        }
        if i as f64 * ulen >= 1.0 && chunk <= 1e-14 {
            break;
        }
        ans += chunk;
    }
    ans.min(1.0)
}

/// Upper tail of the studentized range.
pub fn ptukey_sf(q: f64, k: f64, df: f64) -> f64 {
    (1.0 - ptukey(q, k, df)).max(0.0)
}
