use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use asafeplace_core::personalize::{GenerationClient, GuidanceScript};
use asafeplace_core::session::{
    assign_condition, export_dataset, Assets, Condition, EventKind, LiveSession, Phase, PhasePlan,
    RecordStatus, RecordStore, ScoreKey, SessionContext, SessionRecord,
};
use asafeplace_core::signal::read_replay_file;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::driver::{ReplaySource, Slot};
use crate::pool::{materialize, pool_script, resolve, AssetKind};
use crate::{GatewayError, ServiceConfig};

pub struct AppState {
    pub cfg: ServiceConfig,
    pub store: RecordStore,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    generator: Arc<dyn GenerationClient>,
    closing: tokio::sync::watch::Sender<bool>,
}

impl AppState {
    pub fn new(
        cfg: ServiceConfig,
        generator: Arc<dyn GenerationClient>,
    ) -> Result<Self, GatewayError> {
        let store = RecordStore::open(&cfg.records_dir)?;
        Ok(Self {
            cfg,
            store,
            sessions: RwLock::new(BTreeMap::new()),
            generator,
            closing: tokio::sync::watch::channel(false).0,
        })
    }

    pub fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
    }

    fn slots(&self) -> Vec<Arc<Slot>> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        map.values().cloned().collect()
    }

    /// Resolves once shutdown has begun.
    pub fn closing(&self) -> tokio::sync::watch::Receiver<bool> {
        self.closing.subscribe()
    }

    /// Closes frame streams and stops every driver thread.
    pub fn shutdown(&self) {
        self.closing.send_replace(true);
        for s in self.slots() {
            s.shutdown();
        }
    }

    fn stored(&self, id: &str) -> Result<SessionRecord, GatewayError> {
        Ok(self.store.load(id)?)
    }

    /// Condition counts over stored and live sessions, one per participant.
    fn counts(&self) -> [usize; 4] {
        let mut seen = BTreeMap::new();
        if let Ok((records, _)) = self.store.list() {
            for r in records {
                seen.insert(r.participant, r.condition);
            }
        }
        for s in self.slots() {
            seen.insert(s.ctx.participant.clone(), s.ctx.condition);
        }
        let mut counts = [0; 4];
        for c in seen.values() {
            counts[c.group().index()] += 1;
        }
        counts
    }
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, GatewayError> {
    serde_json::from_slice(body).map_err(|e| GatewayError::BadRequest(format!("invalid body: {e}")))
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn phase_of(status: RecordStatus) -> Phase {
    match status {
        RecordStatus::Complete => Phase::Done,
        RecordStatus::Aborted => Phase::Aborted,
        RecordStatus::InProgress => Phase::Setup,
    }
}

pub async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "sessions": state.slots().len() }))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConditionInput {
    Label(String),
    Flags(Condition),
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    participant: String,
    #[serde(default)]
    condition: Option<ConditionInput>,
    #[serde(default)]
    plan: Option<PhasePlan>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    scores: BTreeMap<ScoreKey, f64>,
    #[serde(default)]
    assets: Option<Assets>,
    #[serde(default)]
    script: Option<GuidanceScript>,
    #[serde(default)]
    personalized_at_ms: Option<u64>,
    #[serde(default)]
    session_at_ms: Option<u64>,
    /// Replay file under the fixtures directory that feeds the sensors.
    #[serde(default)]
    replay: Option<String>,
    #[serde(default = "one")]
    speed: f64,
    #[serde(default = "yes")]
    auto_advance: bool,
}

pub async fn create(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Response, GatewayError> {
    let req: CreateSession = parse_body(&body)?;
    let condition = match req.condition {
        Some(ConditionInput::Label(l)) => l
            .parse()
            .map_err(|_| GatewayError::BadRequest(format!("unknown condition {l:?}")))?,
        Some(ConditionInput::Flags(c)) => c,
        None => assign_condition(req.seed, state.counts()),
    };
    let mut ctx = SessionContext::new(req.participant, condition);
    ctx.plan = req.plan.unwrap_or_default();
    ctx.seed = req.seed;
    ctx.scores = req.scores;
    if let Some(a) = req.assets {
        ctx.assets = a;
    }
    ctx.script = req.script;
    ctx.personalized_at_ms = req.personalized_at_ms;
    ctx.session_at_ms = req
        .session_at_ms
        .or(condition.personalization.then(unix_ms));

    let replay = match &req.replay {
        Some(rel) => {
            let path = resolve(&state.cfg.fixtures_dir, rel)
                .ok_or_else(|| GatewayError::BadRequest(format!("bad replay path {rel:?}")))?;
            let samples = tokio::task::spawn_blocking(move || read_replay_file(path))
                .await
                .map_err(|e| GatewayError::Config(e.to_string()))?
                .map_err(|e| GatewayError::BadRequest(format!("replay {rel}: {e}")))?
                .samples;
            if samples.is_empty() {
                return Err(GatewayError::BadRequest(format!(
                    "replay {rel} has no samples"
                )));
            }
            if !(req.speed.is_finite() && req.speed >= 0.0) {
                return Err(GatewayError::BadRequest(
                    "speed must be finite and >= 0".into(),
                ));
            }
            Some(ReplaySource {
                samples: Arc::new(samples),
                speed: req.speed,
                auto_advance: req.auto_advance,
            })
        }
        None => None,
    };
    let created_ms = replay.as_ref().map_or(0, |r| r.samples[0].t);
    let live = LiveSession::new(ctx.clone(), state.cfg.run.clone(), created_ms)
        .map_err(|e| GatewayError::from_session(e, Phase::Setup))?;
    let id = live.id().to_string();

    let mut sessions = state.sessions.write().unwrap_or_else(|p| p.into_inner());
    let existing = match sessions.get(&id) {
        Some(s) => Some(s.lock().phase()),
        None => state.store.path_of(&id).exists().then(|| {
            state
                .store
                .load(&id)
                .map_or(Phase::Aborted, |r| phase_of(r.status))
        }),
    };
    if let Some(phase) = existing {
        return Err(GatewayError::Conflict {
            message: format!("session {id} already exists"),
            phase,
        });
    }
    sessions.insert(
        id.clone(),
        Slot::new(live, ctx, replay, state.store.clone()),
    );
    drop(sessions);
    tracing::info!(%id, %condition, "session created");
    let body = json!({ "id": id, "condition": condition.label(), "phase": Phase::Setup });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Serialize)]
struct Summary {
    id: String,
    participant: String,
    condition: &'static str,
    phase: Phase,
    valid: bool,
}

pub async fn list(State(state): State<Arc<AppState>>) -> Result<Json<Value>, GatewayError> {
    let (records, warnings) = state.store.list()?;
    let mut out: BTreeMap<String, Summary> = records
        .into_iter()
        .map(|r| {
            let s = Summary {
                id: r.id.clone(),
                participant: r.participant.clone(),
                condition: r.condition.label(),
                phase: phase_of(r.status),
                valid: r.is_valid(),
            };
            (r.id, s)
        })
        .collect();
    for slot in state.slots() {
        let live = slot.lock();
        let r = live.record();
        out.insert(
            r.id.clone(),
            Summary {
                id: r.id.clone(),
                participant: r.participant.clone(),
                condition: r.condition.label(),
                phase: live.phase(),
                valid: r.is_valid(),
            },
        );
    }
    let sessions: Vec<_> = out.into_values().collect();
    Ok(Json(json!({ "sessions": sessions, "warnings": warnings })))
}

fn describe(record: &SessionRecord, phase: Phase) -> Value {
    json!({
        "id": record.id,
        "phase": phase,
        "valid": record.is_valid(),
        "violations": record.validate(),
        "record": record,
    })
}

pub async fn get(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, GatewayError> {
    if let Some(slot) = state.slot(&id) {
        let live = slot.lock();
        return Ok(Json(describe(live.record(), live.phase())));
    }
    let r = state.stored(&id)?;
    Ok(Json(describe(&r, phase_of(r.status))))
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Start,
    Advance,
    Abort,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AbortBody {
    #[serde(default)]
    reason: Option<String>,
}

async fn act(state: &AppState, id: &str, op: Op, body: &[u8]) -> Result<Json<Value>, GatewayError> {
    let Some(slot) = state.slot(id) else {
        // sessions from an earlier run are finished; every action is illegal
        let r = state.stored(id)?;
        let phase = phase_of(r.status);
        return Err(GatewayError::Conflict {
            message: format!("session {id} is {phase}"),
            phase,
        });
    };
    let reason = match op {
        Op::Abort if !body.iter().all(u8::is_ascii_whitespace) => {
            parse_body::<AbortBody>(body)?.reason
        }
        _ => None,
    };
    if let Op::Start = op {
        let phase = slot.lock().phase();
        let phase = slot
            .start()
            .map_err(|e| GatewayError::from_session(e, phase))?;
        return Ok(Json(json!({ "id": id, "phase": phase })));
    }
    let mut live = slot.lock();
    let before = live.phase();
    let t = slot.clock(&mut live);
    let frames = match op {
        Op::Advance => live.advance(t),
        _ => live.abort(t, reason.as_deref().unwrap_or("operator abort")),
    }
    .map_err(|e| GatewayError::from_session(e, before))?;
    slot.settle(&live, &frames);
    Ok(Json(json!({ "id": id, "phase": live.phase() })))
}

pub async fn start(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, GatewayError> {
    act(&s, &id, Op::Start, &body).await
}

pub async fn advance(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, GatewayError> {
    act(&s, &id, Op::Advance, &body).await
}

pub async fn abort(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, GatewayError> {
    act(&s, &id, Op::Abort, &body).await
}

pub async fn log_event(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, GatewayError> {
    let kind: EventKind = parse_body(&body)?;
    let slot = state
        .slot(&id)
        .ok_or_else(|| GatewayError::NotFound(id.clone()))?;
    let mut live = slot.lock();
    let t = slot.clock(&mut live);
    let phase = live.phase();
    live.log_event(t, kind)
        .map_err(|e| GatewayError::from_session(e, phase))?;
    Ok((StatusCode::CREATED, Json(json!({ "t": t, "phase": phase }))).into_response())
}

pub async fn live(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, GatewayError> {
    let slot = state
        .slot(&id)
        .ok_or_else(|| GatewayError::NotFound(id.clone()))?;
    let mut live = slot.lock();
    slot.clock(&mut live);
    Ok(Json(json!({
        "readout": live.readout(),
        "streaming": live.streaming(),
        "planned_end": live.planned_end(),
        "max_lag_ms": slot.max_lag_ms(),
    })))
}

pub async fn asset(
    State(state): State<Arc<AppState>>,
    Path((id, kind)): Path<(String, String)>,
) -> Result<Response, GatewayError> {
    let kind: AssetKind = kind.parse()?;
    let (assets, text) = match state.slot(&id) {
        Some(slot) => {
            let ctx = &slot.ctx;
            let text = match (&ctx.script, ctx.condition.personalization) {
                (Some(s), true) => Some(s.text.clone()),
                (_, false) => None,
                (None, true) => return Err(GatewayError::NotFound(format!("{id} has no script"))),
            };
            (ctx.assets.clone(), text)
        }
        None => {
            let r = state.stored(&id)?;
            (r.assets, None)
        }
    };
    // personalized text is served as approved; the pool script is generated
    if let (AssetKind::Script, Some(t)) = (kind, &text) {
        return Ok(([(header::CONTENT_TYPE, kind.content_type())], t.clone()).into_response());
    }
    let root = state.cfg.fixtures_dir.clone();
    let client = Arc::clone(&state.generator);
    let pooled = matches!(assets.source, asafeplace_core::session::AssetSource::Pool);
    let bytes = tokio::task::spawn_blocking(move || -> Result<Option<Vec<u8>>, GatewayError> {
        let text = match text {
            Some(t) => Some(t),
            None if pooled => Some(pool_script()?),
            None => None,
        };
        match materialize(&root, &assets, text.as_deref(), kind, client.as_ref())? {
            Some(path) => Ok(Some(std::fs::read(path)?)),
            None => Ok(None),
        }
    })
    .await
    .map_err(|e| GatewayError::Config(e.to_string()))??
    .ok_or_else(|| GatewayError::NotFound(format!("{id} has no {kind:?} asset")))?;
    Ok(([(header::CONTENT_TYPE, kind.content_type())], bytes).into_response())
}

pub async fn export_csv(State(state): State<Arc<AppState>>) -> Result<Response, GatewayError> {
    let (records, _) = state.store.list()?;
    let ex = export_dataset(&records)?;
    let mut headers = HeaderMap::new();
    headers.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("text/csv; charset=utf-8"),
    );
    if !ex.skipped.is_empty() {
        let ids: Vec<&str> = ex.skipped.iter().map(|(id, _)| id.as_str()).collect();
        if let Ok(v) = HeaderValue::from_str(&ids.join(",")) {
            headers.insert("x-skipped-records", v);
        }
    }
    Ok((headers, ex.csv).into_response())
}
