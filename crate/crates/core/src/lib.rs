//! Core engine for breath-coupled relaxation training.
//!
//! The crate is split along the data flow of a session:
//!
//! - [`signal`]: timestamped sensor samples from replay files, a seeded
//!   synthetic generator, or a live adapter.
//! - [`metrics`]: pulse peaks, NN series, SDNN and respiration rate per phase.
//! - [`biofeedback`]: breath signal to particle frames (normalized stretch,
//!   phase, signed radial gain).
//! - [`personalize`]: guidance template grammar, snippet rules, profile
//!   extraction and generation-job presets behind client seams.
//! - [`session`]: 2x2 condition assignment, the S1/S2/S3 protocol, record
//!   persistence and dataset export.
//! - [`stats`]: the analysis kernel (Shapiro-Wilk, paired t, Wilcoxon,
//!   ANOVA, Tukey HSD, Kruskal-Wallis, two-way ANOVA) and study reports.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod biofeedback;
pub mod metrics;
pub mod personalize;
pub mod session;
pub mod signal;
pub mod stats;
