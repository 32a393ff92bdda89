//! Per-session state shared between request handlers, the sensor driver
//! thread and frame subscribers. The driver thread is the only writer of
//! sensor data; operator actions take the same lock briefly.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use asafeplace_core::biofeedback::BreathFrame;
use asafeplace_core::session::{LiveSession, Phase, RecordStore, SessionContext, SessionError};
use asafeplace_core::signal::{PacedStream, SampleSource, SensorSample};
use serde::Serialize;
use tokio::sync::{broadcast, watch};

/// Frames buffered per subscriber before it is skipped ahead to the latest.
pub const FRAME_BUFFER: usize = 16;

/// One encoded frame, shared by every subscriber.
#[derive(Debug)]
pub struct WireFrame {
    pub t: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Status {
    pub phase: Phase,
    pub streaming: bool,
}

#[derive(Debug, Clone)]
pub struct ReplaySource {
    pub samples: Arc<Vec<SensorSample>>,
    pub speed: f64,
    /// Advance phases when the plan says so instead of waiting for the operator.
    pub auto_advance: bool,
}

pub struct Slot {
    live: Mutex<LiveSession>,
    pub ctx: SessionContext,
    pub replay: Option<ReplaySource>,
    frames: broadcast::Sender<Arc<WireFrame>>,
    latest: watch::Sender<Option<Arc<WireFrame>>>,
    status: watch::Sender<Status>,
    created: Instant,
    max_lag_us: AtomicU64,
    stop: AtomicBool,
    saved: AtomicBool,
    driver: Mutex<Option<JoinHandle<()>>>,
    store: RecordStore,
}

impl Slot {
    pub fn new(
        live: LiveSession,
        ctx: SessionContext,
        replay: Option<ReplaySource>,
        store: RecordStore,
    ) -> Arc<Self> {
        let status = Status {
            phase: live.phase(),
            streaming: false,
        };
        Arc::new(Self {
            live: Mutex::new(live),
            ctx,
            replay,
            frames: broadcast::channel(FRAME_BUFFER).0,
            latest: watch::channel(None).0,
            status: watch::channel(status).0,
            created: Instant::now(),
            max_lag_us: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            saved: AtomicBool::new(false),
            driver: Mutex::new(None),
            store,
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, LiveSession> {
        self.live.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Session clock for operator actions: sample time under a replay, wall
    /// time since creation otherwise.
    pub fn clock(&self, live: &mut LiveSession) -> u64 {
        match self.replay {
            Some(_) => live.now(),
            None => live.tick(self.created.elapsed().as_millis() as u64),
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<WireFrame>> {
        self.frames.subscribe()
    }

    pub fn latest(&self) -> Option<Arc<WireFrame>> {
        self.latest.borrow().clone()
    }

    pub fn watch_status(&self) -> watch::Receiver<Status> {
        self.status.subscribe()
    }

    pub fn max_lag_ms(&self) -> f64 {
        self.max_lag_us.load(Ordering::Relaxed) as f64 / 1000.0
    }

    fn publish(&self, f: &BreathFrame) {
        let frame = Arc::new(WireFrame {
            t: f.t,
            text: f.to_wire(),
        });
        self.latest.send_replace(Some(frame.clone()));
        // no receivers is fine
        let _ = self.frames.send(frame);
    }

    /// Publishes frames and status, and stores the record once it is terminal.
    pub fn settle(&self, live: &LiveSession, frames: &[BreathFrame]) {
        for f in frames {
            self.publish(f);
        }
        let now = Status {
            phase: live.phase(),
            streaming: live.streaming(),
        };
        self.status.send_if_modified(|s| {
            let changed = *s != now;
            *s = now;
            changed
        });
        if live.phase().is_terminal() && !self.saved.swap(true, Ordering::SeqCst) {
            self.stop.store(true, Ordering::SeqCst);
            if let Err(e) = self.store.save(live.record()) {
                tracing::error!(id = live.id(), error = %e, "saving record failed");
                self.saved.store(false, Ordering::SeqCst);
            }
        }
    }

    /// Starts the session and, with a replay, the driver thread.
    pub fn start(self: &Arc<Self>) -> Result<Phase, SessionError> {
        let mut live = self.lock();
        let t = self.clock(&mut live);
        live.start(t)?;
        self.settle(&live, &[]);
        if let Some(replay) = self.replay.clone() {
            let stream = PacedStream::new(replay.samples.to_vec(), replay.speed)?;
            let slot = Arc::clone(self);
            let handle = std::thread::Builder::new()
                .name(format!("driver-{}", live.id()))
                .spawn(move || slot.drive(stream, &replay))?;
            *self.driver.lock().unwrap_or_else(|p| p.into_inner()) = Some(handle);
        }
        Ok(live.phase())
    }

    fn drive(&self, mut stream: PacedStream, replay: &ReplaySource) {
        let t0 = replay.samples.first().map_or(0, |s| s.t);
        let wall0 = Instant::now();
        while let Some(s) = stream.next_sample() {
            if self.stop.load(Ordering::SeqCst) {
                return;
            }
            let mut live = self.lock();
            let mut frames = Vec::new();
            if replay.auto_advance {
                while let Some(end) = live.planned_end().filter(|&e| s.t >= e) {
                    match live.advance(end) {
                        Ok(f) => frames.extend(f),
                        Err(e) => tracing::warn!(error = %e, "auto advance failed"),
                    }
                }
            }
            if live.phase().is_terminal() {
                self.settle(&live, &frames);
                return;
            }
            match live.push(&s) {
                Ok(f) => frames.extend(f),
                Err(SessionError::Dropout {
                    channel, gap_ms, ..
                }) => {
                    tracing::warn!(id = live.id(), %channel, gap_ms, "sensor dropout");
                }
                Err(e) => tracing::error!(error = %e, "sample rejected"),
            }
            self.settle(&live, &frames);
            drop(live);
            if replay.speed > 0.0 {
                let due =
                    Duration::from_secs_f64(s.t.saturating_sub(t0) as f64 / replay.speed / 1000.0);
                let lag = wall0.elapsed().saturating_sub(due).as_micros() as u64;
                self.max_lag_us.fetch_max(lag, Ordering::Relaxed);
            }
        }
        self.stream_ended(replay);
    }

    fn stream_ended(&self, replay: &ReplaySource) {
        if replay.auto_advance {
            let mut live = self.lock();
            if !live.phase().is_terminal() {
                let mut sink = Vec::new();
                if let Err(e) = live.end_of_stream(&mut sink) {
                    tracing::error!(error = %e, "closing session failed");
                }
                self.settle(&live, &sink);
            }
            return;
        }
        // the operator has the dropout window to finish the session by hand
        let window = Duration::from_millis(self.lock().config().dropout_ms);
        let window = if replay.speed > 0.0 {
            window.div_f64(replay.speed)
        } else {
            window
        };
        let deadline = Instant::now() + window;
        while Instant::now() < deadline {
            if self.stop.load(Ordering::SeqCst) {
                return;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        let mut live = self.lock();
        if !live.phase().is_terminal() && live.phase() != Phase::Setup {
            let t = live.now();
            match live.abort(t, "sensor stream ended") {
                Ok(f) => self.settle(&live, &f),
                Err(e) => tracing::warn!(error = %e, "abort after stream end failed"),
            }
        }
    }

    /// Stops the driver thread and waits for it.
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let handle = self.driver.lock().unwrap_or_else(|p| p.into_inner()).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }
}
