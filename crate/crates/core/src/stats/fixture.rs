//! Synthetic study tables whose per-cell change scores have prescribed
//! sample means and standard deviations.
//!
//! Each cell draws standard normals, rescales them to exactly mean 0 and
//! sample SD 1, then maps them onto the target moments. The F statistics of
//! the resulting tables therefore depend only on the targets, while the
//! individual values still vary with the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::table::{Group, StudyRow, StudyTable};

/// Mean and SD per cell, in [`Group::ALL`] order.
pub type CellMoments = [(f64, f64); 4];

pub const SDNN_PCT: CellMoments = [(42.5, 20.1), (15.0, 21.4), (24.7, 24.1), (20.3, 14.9)];
pub const RES_PCT: CellMoments = [(-45.2, 35.5), (-4.6, 15.9), (-31.9, 22.9), (-19.0, 17.2)];
pub const RRS_CHANGE: CellMoments = [(1.85, 1.86), (1.85, 1.46), (1.38, 1.56), (1.46, 1.27)];
pub const STAI_CHANGE: CellMoments = [
    (-17.38, 11.93),
    (-12.62, 10.74),
    (-12.23, 10.78),
    (-9.0, 14.14),
];
pub const FSS: CellMoments = [(49.31, 10.9), (50.0, 12.03), (47.15, 7.15), (47.15, 13.7)];
pub const RELEVANCE: CellMoments = [(5.77, 0.75), (5.83, 0.89), (4.96, 0.8), (5.0, 1.35)];
pub const IPQ_GP: CellMoments = [(0.84, 0.64), (-0.05, 0.99), (-0.43, 0.69), (-0.58, 0.59)];
pub const IPQ_SP: CellMoments = [(0.88, 0.88), (-0.12, 0.9), (-0.36, 1.04), (-0.42, 1.01)];
pub const IPQ_INV: CellMoments = [(0.59, 0.86), (0.27, 0.74), (-0.44, 0.74), (-0.61, 0.95)];
pub const IPQ_REAL: CellMoments = [(0.98, 0.96), (-0.17, 1.23), (-0.52, 0.91), (-0.71, 0.97)];

/// Stress-phase levels the changes are applied to: (mean, sd, floor).
const SDNN_S2: (f64, f64, f64) = (42.0, 9.0, 15.0);
const RES_S2: (f64, f64, f64) = (17.0, 2.5, 10.0);
const RRS_S2: (f64, f64, f64) = (4.0, 1.5, 0.0);
const STAI_S2: (f64, f64, f64) = (50.0, 8.0, 20.0);

/// Percent changes below this would drive the relaxation value to zero or below.
const MIN_PCT: f64 = -90.0;

fn standardized(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let m = z.iter().sum::<f64>() / n as f64;
    let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    z.iter().map(|v| (v - m) / sd).collect()
}

/// `n` values with sample mean `mu` and sample SD `sd` exactly (up to rounding),
/// redrawn until every value is above `floor`.
pub fn matched(rng: &mut ChaCha8Rng, n: usize, mu: f64, sd: f64, floor: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = standardized(rng, n).iter().map(|z| mu + sd * z).collect();
        if v.iter().all(|&x| x > floor) {
            return v;
        }
    }
}

fn levels(rng: &mut ChaCha8Rng, n: usize, (mu, sd, floor): (f64, f64, f64)) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (mu + sd * z).max(floor)
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a balanced table with `n_per_cell` participants per cell.
pub fn generate_study(seed: u64, n_per_cell: usize) -> StudyTable {
    assert!(n_per_cell >= 3, "need at least 3 participants per cell");
    let mut rows = Vec::with_capacity(4 * n_per_cell);
    for (gi, g) in Group::ALL.into_iter().enumerate() {
        let base = 100 * gi as u64;
        let col = |id: u64, m: &CellMoments, floor: f64| {
            let (mu, sd) = m[gi];
            matched(&mut stream(seed, base + id), n_per_cell, mu, sd, floor)
        };
        let sdnn_pct = col(1, &SDNN_PCT, MIN_PCT);
        let res_pct = col(2, &RES_PCT, MIN_PCT);
        let rrs_d = col(3, &RRS_CHANGE, f64::NEG_INFINITY);
        let stai_d = col(4, &STAI_CHANGE, f64::NEG_INFINITY);
        let fss = col(5, &FSS, f64::NEG_INFINITY);
        let rel = col(6, &RELEVANCE, f64::NEG_INFINITY);
        let gp = col(7, &IPQ_GP, f64::NEG_INFINITY);
        let sp = col(8, &IPQ_SP, f64::NEG_INFINITY);
        let inv = col(9, &IPQ_INV, f64::NEG_INFINITY);
        let real = col(10, &IPQ_REAL, f64::NEG_INFINITY);

        let mut lv = stream(seed, base + 50);
        let sdnn2 = levels(&mut lv, n_per_cell, SDNN_S2);
        let res2 = levels(&mut lv, n_per_cell, RES_S2);
        let rrs2 = levels(&mut lv, n_per_cell, RRS_S2);
        let stai2 = levels(&mut lv, n_per_cell, STAI_S2);

        for i in 0..n_per_cell {
            rows.push(StudyRow {
                pid: format!("{}{:02}", g.label().to_ascii_lowercase(), i + 1),
                pers: g.personalization(),
                bio: g.biofeedback(),
                sdnn_s2: sdnn2[i],
                sdnn_s3: sdnn2[i] * (1.0 + sdnn_pct[i] / 100.0),
                res_s2: res2[i],
                res_s3: res2[i] * (1.0 + res_pct[i] / 100.0),
                rrs_s2: rrs2[i],
                rrs_s3: rrs2[i] + rrs_d[i],
                stai_s2: stai2[i],
                stai_s3: stai2[i] + stai_d[i],
                fss: Some(fss[i]),
                relevance: Some(rel[i]),
                ipq_gp: Some(gp[i]),
                ipq_sp: Some(sp[i]),
                ipq_inv: Some(inv[i]),
                ipq_real: Some(real[i]),
            });
        }
    }
    StudyTable { rows }
}
