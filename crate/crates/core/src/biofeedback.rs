//! Breath signal to particle-biofeedback frames.
//!
//! The belt value is normalized against a rolling min-max window, smoothed,
//! and differentiated. The derivative drives the particle sphere: inhaling
//! (rising stretch) pulls particles toward the viewer (negative radial gain),
//! exhaling pushes them away.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Channel, SensorSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    /// Rolling min-max horizon.
    pub norm_window_s: f64,
    pub ema_alpha: f64,
    pub gain_k: f64,
    /// |db/dt| (per second) at or below which the phase is `hold`.
    pub hold_band: f64,
    pub frame_rate_hz: f64,
    /// Normalization history required before frames carry real values.
    pub warmup_s: f64,
    /// Sample gaps longer than this produce stale hold frames.
    pub stale_gap_s: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            norm_window_s: 30.0,
            ema_alpha: 0.3,
            gain_k: 1.0,
            hold_band: 0.02,
            frame_rate_hz: 30.0,
            warmup_s: 5.0,
            stale_gap_s: 2.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("invalid map config: {0}")]
    Config(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("frame violates invariant: {0}")]
    Invariant(String),
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), FrameError> {
        let positive = [
            ("norm_window_s", self.norm_window_s),
            ("gain_k", self.gain_k),
            ("hold_band", self.hold_band),
            ("frame_rate_hz", self.frame_rate_hz),
            ("warmup_s", self.warmup_s),
            ("stale_gap_s", self.stale_gap_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FrameError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(FrameError::Config("ema_alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreathPhase {
    Inhale,
    Exhale,
    Hold,
}

/// The biofeedback wire unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreathFrame {
    pub t: u64,
    pub b: f64,
    pub phase: BreathPhase,
    #[serde(rename = "g")]
    pub radial_gain: f64,
    /// Smoothed derivative of `b` per second; not part of the wire schema.
    #[serde(skip)]
    pub db_dt: f64,
    #[serde(skip)]
    pub stale: bool,
    #[serde(skip)]
    pub warming: bool,
}

impl BreathFrame {
    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }

    /// Decodes and checks a wire message.
    pub fn from_wire(text: &str) -> Result<Self, FrameError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wire {
            t: u64,
            b: f64,
            phase: BreathPhase,
            g: f64,
        }
        let w: Wire =
            serde_json::from_str(text).map_err(|e| FrameError::Malformed(e.to_string()))?;
        let frame = BreathFrame {
            t: w.t,
            b: w.b,
            phase: w.phase,
            radial_gain: w.g,
            db_dt: 0.0,
            stale: false,
            warming: false,
        };
        frame.check()?;
        Ok(frame)
    }

    pub fn check(&self) -> Result<(), FrameError> {
        if !(0.0..=1.0).contains(&self.b) {
            return Err(FrameError::Invariant(format!(
                "b = {} outside [0, 1]",
                self.b
            )));
        }
        if !(self.radial_gain.abs() <= 1.0) {
            return Err(FrameError::Invariant(format!(
                "|g| = {} exceeds 1",
                self.radial_gain.abs()
            )));
        }
        match self.phase {
            BreathPhase::Inhale if self.radial_gain > 0.0 => Err(FrameError::Invariant(
                "inhale frame with outward gain".into(),
            )),
            BreathPhase::Exhale if self.radial_gain < 0.0 => Err(FrameError::Invariant(
                "exhale frame with inward gain".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Rolling min-max over a trailing horizon (monotonic deques).
#[derive(Debug, Clone)]
pub struct RollingMinMax {
    horizon_ms: f64,
    warmup_ms: f64,
    mins: VecDeque<(f64, f64)>,
    maxs: VecDeque<(f64, f64)>,
    first_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub b: f64,
    pub warming: bool,
}

const DEGENERATE_RANGE: f64 = 1e-9;

impl RollingMinMax {
    pub fn new(horizon_s: f64, warmup_s: f64) -> Self {
        Self {
            horizon_ms: horizon_s * 1000.0,
            warmup_ms: warmup_s * 1000.0,
            mins: VecDeque::new(),
            maxs: VecDeque::new(),
            first_t: None,
        }
    }

    pub fn push(&mut self, t: f64, v: f64) {
        self.first_t.get_or_insert(t);
        while self.mins.back().is_some_and(|&(_, m)| m >= v) {
            self.mins.pop_back();
        }
        self.mins.push_back((t, v));
        while self.maxs.back().is_some_and(|&(_, m)| m <= v) {
            self.maxs.pop_back();
        }
        self.maxs.push_back((t, v));
        self.evict(t);
    }

    fn evict(&mut self, now: f64) {
        let cutoff = now - self.horizon_ms;
        while self.mins.front().is_some_and(|&(t, _)| t < cutoff) {
            self.mins.pop_front();
        }
        while self.maxs.front().is_some_and(|&(t, _)| t < cutoff) {
            self.maxs.pop_front();
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        Some((self.mins.front()?.1, self.maxs.front()?.1))
    }

    pub fn is_warm(&self, now: f64) -> bool {
        self.first_t.is_some_and(|t0| now - t0 >= self.warmup_ms)
    }

    /// Maps `raw` into [0, 1] against the current window.
    pub fn normalize(&self, raw: f64, now: f64) -> Normalized {
        if !self.is_warm(now) {
            return Normalized {
                b: 0.5,
                warming: true,
            };
        }
        let b = match self.range() {
            Some((lo, hi)) if hi - lo >= DEGENERATE_RANGE && raw.is_finite() => {
                ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
            _ => 0.5,
        };
        Normalized { b, warming: false }
    }
}

/// Maps a smoothed breath value and its derivative (per second) to a frame.
pub fn map_frame(t: u64, b_smoothed: f64, db_dt: f64, cfg: &MapConfig) -> BreathFrame {
    let b = if b_smoothed.is_finite() {
        b_smoothed.clamp(0.0, 1.0)
    } else {
        0.5
    };
    let d = if db_dt.is_finite() { db_dt } else { 0.0 };
    let phase = if d > cfg.hold_band {
        BreathPhase::Inhale
    } else if d < -cfg.hold_band {
        BreathPhase::Exhale
    } else {
        BreathPhase::Hold
    };
    // + 0.0 folds -0.0 into 0.0
    let radial_gain = (-cfg.gain_k * d).clamp(-1.0, 1.0) + 0.0;
    BreathFrame {
        t,
        b,
        phase,
        radial_gain,
        db_dt: d,
        stale: false,
        warming: false,
    }
}

/// Streaming resampler from belt samples to frames at `frame_rate_hz`.
///
/// Frame ticks are laid out from the first sample; each tick interpolates the
/// raw signal linearly between the samples around it. Ticks after the last
/// sample are only produced by [`FrameMapper::finish`].
#[derive(Debug, Clone)]
pub struct FrameMapper {
    cfg: MapConfig,
    period_ms: f64,
    norm: RollingMinMax,
    origin: Option<f64>,
    next_tick: u64,
    last: Option<(f64, f64)>,
    last_gap: f64,
    ema: Option<f64>,
    last_b: f64,
}

impl FrameMapper {
    pub fn new(cfg: MapConfig) -> Result<Self, FrameError> {
        cfg.validate()?;
        Ok(Self {
            period_ms: 1000.0 / cfg.frame_rate_hz,
            norm: RollingMinMax::new(cfg.norm_window_s, cfg.warmup_s),
            cfg,
            origin: None,
            next_tick: 0,
            last: None,
            last_gap: 0.0,
            ema: None,
            last_b: 0.5,
        })
    }

    fn tick_time(&self, k: u64) -> f64 {
        self.origin.unwrap_or(0.0) + k as f64 * self.period_ms
    }

    /// Feeds one belt sample and returns the frames that became due.
    pub fn push(&mut self, t_ms: u64, raw: f64) -> Vec<BreathFrame> {
        let t = t_ms as f64;
        let mut out = Vec::new();
        if !raw.is_finite() {
            return out;
        }
        if let Some((tp, rp)) = self.last {
            if t <= tp {
                return out;
            }
            let gap = t - tp;
            let stale = gap > self.cfg.stale_gap_s * 1000.0;
            while self.tick_time(self.next_tick) < t {
                let tk = self.tick_time(self.next_tick);
                let frame = if stale && tk > tp {
                    self.stale_frame(tk)
                } else {
                    let r = rp + (raw - rp) * (tk - tp) / gap;
                    self.frame_at(tk, r)
                };
                out.push(frame);
                self.next_tick += 1;
            }
            if stale {
                // resume from a fresh smoothing state after a dropout
                self.ema = None;
            }
            self.last_gap = gap;
        } else {
            self.origin = Some(t);
        }
        self.norm.push(t, raw);
        self.last = Some((t, raw));
        out
    }

    /// Flushes ticks covering the final sample interval.
    pub fn finish(&mut self) -> Vec<BreathFrame> {
        let mut out = Vec::new();
        if let Some((tp, rp)) = self.last {
            let end = tp + self.last_gap.max(0.0);
            while self.tick_time(self.next_tick) < end
                || (self.last_gap == 0.0 && self.next_tick == 0)
            {
                let tk = self.tick_time(self.next_tick);
                out.push(self.frame_at(tk, rp));
                self.next_tick += 1;
            }
        }
        out
    }

    fn stale_frame(&self, tk: f64) -> BreathFrame {
        BreathFrame {
            t: tk.round() as u64,
            b: self.last_b,
            phase: BreathPhase::Hold,
            radial_gain: 0.0,
            db_dt: 0.0,
            stale: true,
            warming: false,
        }
    }

    fn frame_at(&mut self, tk: f64, raw: f64) -> BreathFrame {
        let n = self.norm.normalize(raw, tk);
        let t = tk.round() as u64;
        if n.warming {
            self.ema = None;
            self.last_b = 0.5;
            let mut f = map_frame(t, 0.5, 0.0, &self.cfg);
            f.warming = true;
            return f;
        }
        let (smoothed, db_dt) = match self.ema {
            None => (n.b, 0.0),
            Some(prev) => {
                let s = prev + self.cfg.ema_alpha * (n.b - prev);
                (s, (s - prev) * self.cfg.frame_rate_hz)
            }
        };
        self.ema = Some(smoothed);
        self.last_b = smoothed;
        map_frame(t, smoothed, db_dt, &self.cfg)
    }
}

/// Batch frame stream over the breath samples in `samples`.
pub fn frame_stream(
    samples: &[SensorSample],
    cfg: &MapConfig,
) -> Result<Vec<BreathFrame>, FrameError> {
    let mut mapper = FrameMapper::new(cfg.clone())?;
    let mut frames = Vec::new();
    for s in samples.iter().filter(|s| s.channel == Channel::Breath) {
        frames.extend(mapper.push(s.t, s.value));
    }
    frames.extend(mapper.finish());
    Ok(frames)
}

/// Number of `from` -> `to` phase changes, ignoring hold frames in between.
pub fn count_transitions(frames: &[BreathFrame], from: BreathPhase, to: BreathPhase) -> usize {
    let mut last = None;
    let mut n = 0;
    for f in frames.iter().filter(|f| f.phase != BreathPhase::Hold) {
        if last == Some(from) && f.phase == to {
            n += 1;
        }
        last = Some(f.phase);
    }
    n
}
