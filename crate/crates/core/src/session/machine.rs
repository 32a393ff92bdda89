use std::fmt;

use serde::{Deserialize, Serialize};

use super::record::PhaseName;
use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    S1,
    S2,
    S3,
    Done,
    Aborted,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Setup,
        Phase::S1,
        Phase::S2,
        Phase::S3,
        Phase::Done,
        Phase::Aborted,
    ];

    pub fn measured(self) -> Option<PhaseName> {
        match self {
            Phase::S1 => Some(PhaseName::S1),
            Phase::S2 => Some(PhaseName::S2),
            Phase::S3 => Some(PhaseName::S3),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Setup => "setup",
            Phase::S1 => "S1",
            Phase::S2 => "S2",
            Phase::S3 => "S3",
            Phase::Done => "done",
            Phase::Aborted => "aborted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Start,
    Advance,
    Abort,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Start, Action::Advance, Action::Abort];
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Start => "start",
            Action::Advance => "advance",
            Action::Abort => "abort",
        })
    }
}

/// setup -> S1 -> S2 -> S3 -> done, with abort from any non-terminal phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMachine {
    phase: Phase,
}

impl Default for SessionMachine {
    fn default() -> Self {
        Self {
            phase: Phase::Setup,
        }
    }
}

impl SessionMachine {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Where `action` leads from `from`, if anywhere.
    pub fn next(from: Phase, action: Action) -> Option<Phase> {
        use Phase::*;
        match (from, action) {
            (Setup, Action::Start) => Some(S1),
            (S1, Action::Advance) => Some(S2),
            (S2, Action::Advance) => Some(S3),
            (S3, Action::Advance) => Some(Done),
            (Setup | S1 | S2 | S3, Action::Abort) => Some(Aborted),
            _ => None,
        }
    }

    pub fn apply(&mut self, action: Action) -> Result<Phase, SessionError> {
        let to = Self::next(self.phase, action).ok_or(SessionError::IllegalTransition {
            from: self.phase,
            action,
        })?;
        self.phase = to;
        Ok(to)
    }
}
