//! The relaxation-training protocol: condition assignment, the
//! S1 (baseline) / S2 (stress) / S3 (relaxation) timeline, record keeping
//! and dataset export.

pub mod cohort;
mod export;
mod live;
mod machine;
mod record;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biofeedback::FrameError;
use crate::signal::{Channel, SignalError};
use crate::stats::table::Group;

pub use export::{export_dataset, Export};
pub use live::{
    run_session, FrameSink, LiveSession, NullSink, Readout, RunConfig, SessionContext, DAY_MS,
};
pub use machine::{Action, Phase, SessionMachine};
pub use record::{
    AssetSource, Assets, Event, EventKind, PhaseBounds, PhaseName, RecordStatus, RecordStore,
    ScoreKey, SessionRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub personalization: bool,
    pub biofeedback: bool,
}

impl Condition {
    pub const PB: Condition = Condition::new(true, true);
    pub const PN: Condition = Condition::new(true, false);
    pub const NB: Condition = Condition::new(false, true);
    pub const NN: Condition = Condition::new(false, false);
    pub const ALL: [Condition; 4] = [Self::PB, Self::PN, Self::NB, Self::NN];

    pub const fn new(personalization: bool, biofeedback: bool) -> Self {
        Self {
            personalization,
            biofeedback,
        }
    }

    pub fn group(self) -> Group {
        Group::from_flags(self.personalization, self.biofeedback)
    }

    pub fn label(self) -> &'static str {
        self.group().label()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SessionError::Config(format!("unknown condition {s:?}")))
    }
}

/// Seeded balanced assignment: picks uniformly among the cells that
/// currently have the fewest participants. `counts` is in PB, PN, NB, NN order.
pub fn assign_condition(seed: u64, counts: [usize; 4]) -> Condition {
    let min = *counts.iter().min().expect("four cells");
    let open: Vec<Condition> = Condition::ALL
        .into_iter()
        .zip(counts)
        .filter(|(_, n)| *n == min)
        .map(|(c, _)| c)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    open[rng.random_range(0..open.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhasePlan {
    pub baseline_s: f64,
    pub stress_s: f64,
    pub relax_s: f64,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self {
            baseline_s: 300.0,
            stress_s: 600.0,
            relax_s: 600.0,
        }
    }
}

impl PhasePlan {
    pub fn validate(&self) -> Result<(), SessionError> {
        for (name, v) in [
            ("baseline_s", self.baseline_s),
            ("stress_s", self.stress_s),
            ("relax_s", self.relax_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SessionError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn duration_ms(&self, phase: PhaseName) -> u64 {
        let s = match phase {
            PhaseName::S1 => self.baseline_s,
            PhaseName::S2 => self.stress_s,
            PhaseName::S3 => self.relax_s,
        };
        (s * 1000.0).round() as u64
    }

    pub fn total_ms(&self) -> u64 {
        PhaseName::ALL.iter().map(|&p| self.duration_ms(p)).sum()
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot {action} from {from}")]
    IllegalTransition { from: Phase, action: Action },
    #[error("session refused to start: {0}")]
    Refused(String),
    #[error("{channel} dropout of {gap_ms} ms at t={t}")]
    Dropout {
        channel: Channel,
        gap_ms: u64,
        t: u64,
    },
    #[error("record {id} is invalid: {}", violations.join("; "))]
    Invalid { id: String, violations: Vec<String> },
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("no record {0}")]
    NotFound(String),
    #[error("no valid records to export")]
    Empty,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
