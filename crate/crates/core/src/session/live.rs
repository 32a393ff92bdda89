use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::machine::{Action, Phase, SessionMachine};
use super::record::{
    AssetSource, Assets, Event, EventKind, PhaseBounds, PhaseName, RecordStatus, RecordStore,
    ScoreKey, SessionRecord,
};
use super::{Condition, PhasePlan, SessionError};
use crate::biofeedback::{BreathFrame, FrameMapper, MapConfig};
use crate::metrics::{MetricsConfig, PhaseAccumulator, Window};
use crate::personalize::GuidanceScript;
use crate::signal::{Channel, SampleSource, SensorSample};

pub const DAY_MS: u64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub metrics: MetricsConfig,
    pub map: MapConfig,
    /// A channel silent for longer than this aborts the session.
    pub dropout_ms: u64,
    /// Required gap between the personalization visit and the session.
    /// Zero disables the check.
    pub min_personalization_gap_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metrics: MetricsConfig::default(),
            map: MapConfig::default(),
            dropout_ms: 10_000,
            min_personalization_gap_ms: DAY_MS,
        }
    }
}

/// Everything a session needs besides the sensor stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionContext {
    pub participant: String,
    pub condition: Condition,
    #[serde(default)]
    pub plan: PhasePlan,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "pool_assets")]
    pub assets: Assets,
    /// Required under personalization, and must be approved.
    #[serde(default)]
    pub script: Option<GuidanceScript>,
    #[serde(default)]
    pub scores: BTreeMap<ScoreKey, f64>,
    /// Unix milliseconds of the personalization visit.
    #[serde(default)]
    pub personalized_at_ms: Option<u64>,
    /// Unix milliseconds of this session.
    #[serde(default)]
    pub session_at_ms: Option<u64>,
}

fn pool_assets() -> Assets {
    Assets::pool("pool/script.txt", "pool/panorama.png", "pool/audio.wav")
}

impl SessionContext {
    pub fn new(participant: impl Into<String>, condition: Condition) -> Self {
        Self {
            participant: participant.into(),
            condition,
            plan: PhasePlan::default(),
            seed: 0,
            assets: pool_assets(),
            script: None,
            scores: BTreeMap::new(),
            personalized_at_ms: None,
            session_at_ms: None,
        }
    }

    pub fn record_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.participant.as_bytes());
        h.update(self.seed.to_le_bytes());
        let d = h.finalize();
        let tag: String = d[..4].iter().map(|b| format!("{b:02x}")).collect();
        format!("{}-{tag}", self.participant)
    }

    fn check_participant(&self) -> Result<(), SessionError> {
        let p = &self.participant;
        if p.is_empty()
            || !p
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(SessionError::Config(format!(
                "participant tag {p:?} must be non-empty ASCII letters, digits, '-' or '_'"
            )));
        }
        Ok(())
    }

    /// Preconditions checked when the session starts.
    fn readiness(&self, cfg: &RunConfig) -> Result<(), SessionError> {
        let refuse = |m: &str| Err(SessionError::Refused(m.into()));
        if !self.condition.personalization {
            if matches!(self.assets.source, AssetSource::Profile { .. }) {
                return refuse("profile assets given for a non-personalized condition");
            }
            return Ok(());
        }
        let AssetSource::Profile { profile_id } = &self.assets.source else {
            return refuse("personalized condition needs profile assets");
        };
        let Some(script) = &self.script else {
            return refuse("no guidance script");
        };
        if !script.approved {
            return refuse("guidance script is not approved");
        }
        if script.has_placeholders() {
            return refuse("guidance script still has placeholders");
        }
        if script.profile_id.as_ref().is_some_and(|p| p != profile_id) {
            return refuse("guidance script belongs to a different profile");
        }
        if self.assets.script.is_none() || self.assets.panorama.is_none() {
            return refuse("personalized condition needs script and panorama assets");
        }
        if cfg.min_personalization_gap_ms > 0 {
            let (Some(p), Some(s)) = (self.personalized_at_ms, self.session_at_ms) else {
                return refuse("personalization and session timestamps are required");
            };
            if s < p || s - p < cfg.min_personalization_gap_ms {
                return refuse("too little time since the personalization visit");
            }
        }
        Ok(())
    }
}

/// Receives biofeedback frames as they are produced.
pub trait FrameSink {
    fn send(&mut self, frame: &BreathFrame);
}

pub struct NullSink;

impl FrameSink for NullSink {
    fn send(&mut self, _frame: &BreathFrame) {}
}

impl FrameSink for Vec<BreathFrame> {
    fn send(&mut self, frame: &BreathFrame) {
        self.push(*frame);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Readout {
    pub phase: Phase,
    pub t: u64,
    pub beats: usize,
    pub resp_rate_cpm: f64,
    pub frames: u64,
}

struct FrameStream {
    mapper: FrameMapper,
    hasher: Sha256,
    frames: u64,
}

/// One session driven incrementally: operator actions and sensor samples
/// arrive in time order on the session clock.
pub struct LiveSession {
    record: SessionRecord,
    ctx: SessionContext,
    cfg: RunConfig,
    machine: SessionMachine,
    acc: Option<(PhaseName, PhaseAccumulator)>,
    stream: Option<FrameStream>,
    last_seen: [u64; 2],
    now: u64,
}

fn slot(c: Channel) -> usize {
    match c {
        Channel::Breath => 0,
        Channel::Ppg => 1,
    }
}

impl LiveSession {
    pub fn new(ctx: SessionContext, cfg: RunConfig, created_ms: u64) -> Result<Self, SessionError> {
        ctx.check_participant()?;
        ctx.plan.validate()?;
        cfg.map.validate()?;
        let record = SessionRecord {
            id: ctx.record_id(),
            participant: ctx.participant.clone(),
            condition: ctx.condition,
            plan: ctx.plan,
            created_ms,
            status: RecordStatus::InProgress,
            phases: BTreeMap::new(),
            metrics: BTreeMap::new(),
            scores: ctx.scores.clone(),
            assets: ctx.assets.clone(),
            events: vec![Event {
                t: created_ms,
                kind: EventKind::SessionCreated,
            }],
            notes: Vec::new(),
        };
        Ok(Self {
            record,
            ctx,
            cfg,
            machine: SessionMachine::default(),
            acc: None,
            stream: None,
            last_seen: [created_ms; 2],
            now: created_ms,
        })
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn phase(&self) -> Phase {
        self.machine.phase()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn context(&self) -> &SessionContext {
        &self.ctx
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn into_record(self) -> SessionRecord {
        self.record
    }

    pub fn streaming(&self) -> bool {
        self.stream.is_some()
    }

    /// End of the current phase on the plan clock.
    pub fn planned_end(&self) -> Option<u64> {
        let p = self.phase().measured()?;
        let b = self.record.phases.get(&p)?;
        Some(b.start_ms + self.record.plan.duration_ms(p))
    }

    pub fn readout(&self) -> Readout {
        let (beats, resp) = self
            .acc
            .as_ref()
            .map(|(_, a)| (a.beats_so_far(), a.live_resp_rate()))
            .unwrap_or((0, 0.0));
        Readout {
            phase: self.phase(),
            t: self.now,
            beats,
            resp_rate_cpm: resp,
            frames: self.stream.as_ref().map_or(0, |s| s.frames),
        }
    }

    /// Moves the session clock forward to `t` (never backwards), for drivers
    /// without a sensor stream.
    pub fn tick(&mut self, t: u64) -> u64 {
        self.now = self.now.max(t);
        self.now
    }

    fn log(&mut self, t: u64, kind: EventKind) {
        self.record.events.push(Event { t, kind });
    }

    fn open_phase(&mut self, p: PhaseName, t: u64) {
        self.record.phases.insert(
            p,
            PhaseBounds {
                start_ms: t,
                end_ms: t + self.record.plan.duration_ms(p),
            },
        );
        let planned = Window::new(t, t + self.record.plan.duration_ms(p).max(1))
            .expect("plan durations are positive");
        self.acc = Some((p, PhaseAccumulator::new(planned, &self.cfg.metrics)));
        self.last_seen = [t; 2];
        self.log(t, EventKind::PhaseStart { phase: p });
        if p == PhaseName::S3 && self.record.condition.biofeedback {
            let mapper = FrameMapper::new(self.cfg.map.clone()).expect("map config validated");
            self.stream = Some(FrameStream {
                mapper,
                hasher: Sha256::new(),
                frames: 0,
            });
            self.log(t, EventKind::FrameStreamStart);
        }
    }

    /// Closes the running phase at `t`; returns frames flushed from the stream.
    fn close_phase(&mut self, t: u64) -> Vec<BreathFrame> {
        let Some((p, mut acc)) = self.acc.take() else {
            return Vec::new();
        };
        let b = self
            .record
            .phases
            .get_mut(&p)
            .expect("open phase has bounds");
        let end = t.max(b.start_ms + 1);
        b.end_ms = end;
        self.now = self.now.max(end);
        acc.set_end(end);
        match acc.finish() {
            Ok(rep) => {
                for w in &rep.warnings {
                    self.record.notes.push(format!("{p}: {w:?}"));
                }
                self.record.metrics.insert(p, rep.metrics);
            }
            Err(e) => self
                .record
                .notes
                .push(format!("{p} metrics unavailable: {e}")),
        }
        let mut flushed = Vec::new();
        if let Some(mut s) = self.stream.take() {
            for f in s.mapper.finish() {
                if f.t < end {
                    s.hasher.update(f.to_wire().as_bytes());
                    s.hasher.update(b"\n");
                    s.frames += 1;
                    flushed.push(f);
                }
            }
            let digest = s
                .hasher
                .finalize()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            self.log(
                end,
                EventKind::FrameStreamStop {
                    frames: s.frames,
                    digest,
                },
            );
        }
        self.log(end, EventKind::PhaseEnd { phase: p });
        flushed
    }

    /// Setup -> S1. Refuses when the condition's preconditions are not met.
    pub fn start(&mut self, t: u64) -> Result<(), SessionError> {
        if self.phase() == Phase::Setup {
            self.ctx.readiness(&self.cfg)?;
        }
        self.machine.apply(Action::Start)?;
        let t = self.tick(t);
        self.open_phase(PhaseName::S1, t);
        Ok(())
    }

    /// Ends the current phase at `t` and opens the next one.
    pub fn advance(&mut self, t: u64) -> Result<Vec<BreathFrame>, SessionError> {
        let from = self.phase();
        self.machine.apply(Action::Advance)?;
        let t = self.tick(t);
        let frames = self.close_phase(t);
        let end = self.now;
        match from.measured().and_then(PhaseName::next) {
            Some(next) => self.open_phase(next, end),
            None => {
                self.record.status = RecordStatus::Complete;
                self.log(end, EventKind::SessionEnd);
            }
        }
        Ok(frames)
    }

    pub fn abort(&mut self, t: u64, reason: &str) -> Result<Vec<BreathFrame>, SessionError> {
        self.machine.apply(Action::Abort)?;
        let t = self.tick(t);
        let frames = self.close_phase(t);
        let end = self.now;
        self.record.status = RecordStatus::Aborted;
        self.log(
            end,
            EventKind::Aborted {
                reason: reason.into(),
            },
        );
        Ok(frames)
    }

    /// Logs an externally observed event, such as a Stroop answer.
    pub fn log_event(&mut self, t: u64, kind: EventKind) -> Result<(), SessionError> {
        match kind {
            EventKind::StroopAnswer { .. } if self.phase() == Phase::S2 => {}
            EventKind::StroopAnswer { .. } => {
                return Err(SessionError::Rejected(
                    "Stroop answers are only accepted during S2".into(),
                ))
            }
            _ => {
                return Err(SessionError::Rejected(
                    "only Stroop answers may be logged externally".into(),
                ))
            }
        }
        let t = self.tick(t);
        self.log(t, kind);
        Ok(())
    }

    fn stale_channel(&self, t: u64) -> Option<(Channel, u64)> {
        [Channel::Breath, Channel::Ppg]
            .into_iter()
            .map(|c| (c, t.saturating_sub(self.last_seen[slot(c)])))
            .filter(|&(_, gap)| gap > self.cfg.dropout_ms)
            .max_by_key(|&(_, gap)| gap)
    }

    fn dropout(&mut self, channel: Channel, gap_ms: u64) -> SessionError {
        let t = self.now;
        self.log(t, EventKind::Dropout { channel, gap_ms });
        // abort cannot fail from a measured phase
        let _ = self.abort(t, &format!("{channel} dropout of {gap_ms} ms"));
        SessionError::Dropout { channel, gap_ms, t }
    }

    /// Feeds one sample. Returns the biofeedback frames it produced, or a
    /// dropout error after aborting the session.
    pub fn push(&mut self, s: &SensorSample) -> Result<Vec<BreathFrame>, SessionError> {
        if self.phase().measured().is_none() {
            return Ok(Vec::new());
        }
        let t = self.tick(s.t);
        if let Some((c, gap)) = self.stale_channel(t) {
            return Err(self.dropout(c, gap));
        }
        let i = slot(s.channel);
        self.last_seen[i] = self.last_seen[i].max(s.t);
        if let Some((_, acc)) = &mut self.acc {
            acc.push(s);
        }
        let mut out = Vec::new();
        if let (Some(st), Channel::Breath) = (&mut self.stream, s.channel) {
            for f in st.mapper.push(s.t, s.value) {
                st.hasher.update(f.to_wire().as_bytes());
                st.hasher.update(b"\n");
                st.frames += 1;
                out.push(f);
            }
        }
        Ok(out)
    }

    /// The sensor stream has ended: finish the plan if the remaining silence
    /// is within the dropout limit, otherwise abort.
    pub fn end_of_stream(&mut self, sink: &mut dyn FrameSink) -> Result<(), SessionError> {
        while let Some(end) = self.planned_end() {
            if let Some((c, gap)) = self.stale_channel(end) {
                self.dropout(c, gap);
                return Ok(());
            }
            for f in self.advance(end)? {
                sink.send(&f);
            }
        }
        Ok(())
    }
}

/// Runs the whole protocol on the plan clock, which starts at the first
/// sample. A dropout ends the run with an aborted record rather than an error.
pub fn run_session(
    ctx: SessionContext,
    source: &mut dyn SampleSource,
    cfg: &RunConfig,
    sink: &mut dyn FrameSink,
    store: Option<&RecordStore>,
) -> Result<SessionRecord, SessionError> {
    let first = source
        .next_sample()
        .ok_or_else(|| SessionError::Refused("sensor source produced no samples".into()))?;
    let mut live = LiveSession::new(ctx, cfg.clone(), first.t)?;
    live.start(first.t)?;

    let mut next = Some(first);
    while let Some(s) = next.take().or_else(|| source.next_sample()) {
        while let Some(end) = live.planned_end().filter(|&e| s.t >= e) {
            for f in live.advance(end)? {
                sink.send(&f);
            }
        }
        if live.phase().is_terminal() {
            break;
        }
        match live.push(&s) {
            Ok(frames) => frames.iter().for_each(|f| sink.send(f)),
            Err(SessionError::Dropout { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    if !live.phase().is_terminal() {
        live.end_of_stream(sink)?;
    }

    let record = live.into_record();
    if let Some(store) = store {
        store.save(&record)?;
    }
    Ok(record)
}
