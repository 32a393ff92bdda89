use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Condition, PhasePlan, SessionError};
use crate::metrics::PhaseMetrics;
use crate::signal::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseName {
    S1,
    S2,
    S3,
}

impl PhaseName {
    pub const ALL: [PhaseName; 3] = [PhaseName::S1, PhaseName::S2, PhaseName::S3];

    pub fn next(self) -> Option<PhaseName> {
        match self {
            PhaseName::S1 => Some(PhaseName::S2),
            PhaseName::S2 => Some(PhaseName::S3),
            PhaseName::S3 => None,
        }
    }
}

impl fmt::Display for PhaseName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Half-open `[start_ms, end_ms)` on the session clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseBounds {
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreKey {
    #[serde(rename = "RRS_S2")]
    RrsS2,
    #[serde(rename = "RRS_S3")]
    RrsS3,
    #[serde(rename = "STAI_S2")]
    StaiS2,
    #[serde(rename = "STAI_S3")]
    StaiS3,
    #[serde(rename = "FSS")]
    Fss,
    #[serde(rename = "relevance")]
    Relevance,
    #[serde(rename = "IPQ_GP")]
    IpqGp,
    #[serde(rename = "IPQ_SP")]
    IpqSp,
    #[serde(rename = "IPQ_INV")]
    IpqInv,
    #[serde(rename = "IPQ_REAL")]
    IpqReal,
}

impl ScoreKey {
    pub const ALL: [ScoreKey; 10] = [
        ScoreKey::RrsS2,
        ScoreKey::RrsS3,
        ScoreKey::StaiS2,
        ScoreKey::StaiS3,
        ScoreKey::Fss,
        ScoreKey::Relevance,
        ScoreKey::IpqGp,
        ScoreKey::IpqSp,
        ScoreKey::IpqInv,
        ScoreKey::IpqReal,
    ];

    /// Needed for an analysis row; the rest may be blank.
    pub const REQUIRED: [ScoreKey; 4] = [
        ScoreKey::RrsS2,
        ScoreKey::RrsS3,
        ScoreKey::StaiS2,
        ScoreKey::StaiS3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKey::RrsS2 => "RRS_S2",
            ScoreKey::RrsS3 => "RRS_S3",
            ScoreKey::StaiS2 => "STAI_S2",
            ScoreKey::StaiS3 => "STAI_S3",
            ScoreKey::Fss => "FSS",
            ScoreKey::Relevance => "relevance",
            ScoreKey::IpqGp => "IPQ_GP",
            ScoreKey::IpqSp => "IPQ_SP",
            ScoreKey::IpqInv => "IPQ_INV",
            ScoreKey::IpqReal => "IPQ_REAL",
        }
    }
}

impl fmt::Display for ScoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKey {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScoreKey::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SessionError::Config(format!("unknown score {s:?}")))
    }
}

/// Where the script and panorama came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum AssetSource {
    /// The pre-generated pool shared by non-personalized conditions.
    Pool,
    Profile {
        profile_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assets {
    #[serde(flatten)]
    pub source: AssetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panorama: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

impl Assets {
    pub fn pool(script: &str, panorama: &str, audio: &str) -> Self {
        Self {
            source: AssetSource::Pool,
            script: Some(script.into()),
            panorama: Some(panorama.into()),
            audio: Some(audio.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated,
    PhaseStart {
        phase: PhaseName,
    },
    PhaseEnd {
        phase: PhaseName,
    },
    FrameStreamStart,
    /// `digest` is the sha256 of the wire frames joined by newlines.
    FrameStreamStop {
        frames: u64,
        digest: String,
    },
    StroopAnswer {
        correct: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rt_ms: Option<u64>,
    },
    Dropout {
        channel: Channel,
        gap_ms: u64,
    },
    Aborted {
        reason: String,
    },
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    InProgress,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    /// Pseudonymous participant tag.
    pub participant: String,
    pub condition: Condition,
    pub plan: PhasePlan,
    /// Session-clock time the record was created; the setup gap runs from
    /// here to the start of S1.
    pub created_ms: u64,
    pub status: RecordStatus,
    pub phases: BTreeMap<PhaseName, PhaseBounds>,
    pub metrics: BTreeMap<PhaseName, PhaseMetrics>,
    pub scores: BTreeMap<ScoreKey, f64>,
    pub assets: Assets,
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SessionRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Re-checks the protocol and condition invariants. Empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.status {
            RecordStatus::Complete => {}
            RecordStatus::Aborted => v.push("session was aborted".to_string()),
            RecordStatus::InProgress => v.push("session did not finish".to_string()),
        }

        let mut prev_end = self.created_ms;
        for p in PhaseName::ALL {
            match self.phases.get(&p) {
                Some(b) => {
                    if b.start_ms >= b.end_ms {
                        v.push(format!("{p} has an empty or inverted window"));
                    }
                    if b.start_ms < prev_end {
                        v.push(format!("{p} overlaps the previous phase"));
                    }
                    prev_end = b.end_ms;
                }
                None if self.status == RecordStatus::Complete => {
                    v.push(format!("{p} boundaries missing"))
                }
                None => {}
            }
            if self.status == RecordStatus::Complete {
                match self.metrics.get(&p) {
                    None => v.push(format!("{p} metrics missing")),
                    Some(m) if !(m.sdnn_ms.is_finite() && m.resp_rate_cpm.is_finite()) => {
                        v.push(format!("{p} metrics are not finite"))
                    }
                    Some(_) => {}
                }
            }
        }

        for (k, x) in &self.scores {
            if !x.is_finite() {
                v.push(format!("score {k} is not finite"));
            }
        }

        self.check_assets(&mut v);
        self.check_events(prev_end, &mut v);
        v
    }

    fn check_assets(&self, v: &mut Vec<String>) {
        let a = &self.assets;
        match (&a.source, self.condition.personalization) {
            (AssetSource::Profile { .. }, false) => {
                v.push("profile assets under a non-personalized condition".into())
            }
            (AssetSource::Pool, true) => {
                v.push("pool assets under a personalized condition".into())
            }
            (AssetSource::Profile { .. }, true) => {
                if a.script.is_none() || a.panorama.is_none() {
                    v.push("personalized session without script and panorama".into());
                }
            }
            (AssetSource::Pool, false) => {}
        }
    }

    fn check_events(&self, end: u64, v: &mut Vec<String>) {
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            v.push("event log is not time-ordered".into());
        }
        if let Some(e) = self
            .events
            .iter()
            .find(|e| e.t < self.created_ms || e.t > end)
        {
            v.push(format!(
                "event at t={} lies outside the session timeline",
                e.t
            ));
        }
        for e in &self.events {
            let (p, at, what) = match e.kind {
                EventKind::PhaseStart { phase } => {
                    (phase, self.phases.get(&phase).map(|b| b.start_ms), "start")
                }
                EventKind::PhaseEnd { phase } => {
                    (phase, self.phases.get(&phase).map(|b| b.end_ms), "end")
                }
                _ => continue,
            };
            if at != Some(e.t) {
                v.push(format!("{p} {what} event does not match its boundary"));
            }
        }

        let starts: Vec<u64> = self
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::FrameStreamStart))
            .map(|e| e.t)
            .collect();
        let stops: Vec<u64> = self
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::FrameStreamStop { .. }))
            .map(|e| e.t)
            .collect();
        if !self.condition.biofeedback {
            if !starts.is_empty() || !stops.is_empty() {
                v.push("frame stream emitted without biofeedback".into());
            }
            return;
        }
        if self.status != RecordStatus::Complete {
            return;
        }
        match self.phases.get(&PhaseName::S3) {
            Some(s3) if starts == [s3.start_ms] && stops == [s3.end_ms] => {}
            _ => v.push("frame stream does not bracket exactly S3".into()),
        }
    }

    pub fn frame_count(&self) -> u64 {
        self.events
            .iter()
            .map(|e| match e.kind {
                EventKind::FrameStreamStop { frames, .. } => frames,
                _ => 0,
            })
            .sum()
    }
}

/// One JSON file per record. Writes go through a temp file and a rename so
/// an interrupted save never leaves a half-written `<id>.json`.
#[derive(Debug, Clone)]
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn save(&self, record: &SessionRecord) -> Result<PathBuf, SessionError> {
        if record.id.is_empty() || record.id.contains(['/', '\\', '.']) {
            return Err(SessionError::Config(format!(
                "bad record id {:?}",
                record.id
            )));
        }
        let path = self.path_of(&record.id);
        let tmp = self.dir.join(format!(".{}.json.tmp", record.id));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(record.to_json().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(path)
    }

    /// Reads a record as stored, valid or not.
    pub fn load(&self, id: &str) -> Result<SessionRecord, SessionError> {
        let path = self.path_of(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(SessionError::NotFound(id.into()))
            }
            Err(e) => return Err(e.into()),
        };
        SessionRecord::from_json(&text)
    }

    /// Reads a record and rejects it unless it passes validation.
    pub fn load_valid(&self, id: &str) -> Result<SessionRecord, SessionError> {
        let r = self.load(id)?;
        let violations = r.validate();
        if violations.is_empty() {
            Ok(r)
        } else {
            Err(SessionError::Invalid {
                id: r.id,
                violations,
            })
        }
    }

    /// All parseable records sorted by id, plus warnings for files that
    /// could not be read.
    pub fn list(&self) -> Result<(Vec<SessionRecord>, Vec<String>), SessionError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p
                        .file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with('.'))
            })
            .collect();
        paths.sort();
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        for p in paths {
            match fs::read_to_string(&p)
                .map_err(SessionError::from)
                .and_then(|t| SessionRecord::from_json(&t))
            {
                Ok(r) => records.push(r),
                Err(e) => warnings.push(format!("{}: {e}", p.display())),
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok((records, warnings))
    }
}
