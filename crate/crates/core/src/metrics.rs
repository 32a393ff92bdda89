//! Respiration rate and HRV-SDNN from raw sample streams.
//!
//! Every metric is computed by a streaming detector ([`PeakDetector`],
//! [`BreathCycleDetector`], [`PhaseAccumulator`]); the batch functions just
//! feed a window through the same detectors, so live readouts and stored
//! per-phase values cannot drift apart.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{Channel, SensorSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SdKind {
    /// Divisor n - 1.
    #[default]
    Sample,
    /// Divisor n.
    Population,
}

/// All detector thresholds in one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub refractory_ms: f64,
    /// Horizon of the rolling mean/SD behind the pulse threshold.
    pub pulse_window_s: f64,
    /// Threshold = rolling mean + `pulse_threshold_k` * rolling SD.
    pub pulse_threshold_k: f64,
    pub min_pulse_window_s: f64,
    pub nn_min_ms: f64,
    pub nn_max_ms: f64,
    pub sd_kind: SdKind,
    pub breath_ema_alpha: f64,
    /// Hysteresis half-width as a fraction of the rolling SD.
    pub breath_hysteresis_k: f64,
    /// Horizon of the rolling mean/SD used for breath centering.
    pub breath_window_s: f64,
    pub min_cycle_s: f64,
    pub min_breath_window_s: f64,
    /// Below this SD a channel counts as flat.
    pub flat_epsilon: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            refractory_ms: 300.0,
            pulse_window_s: 5.0,
            pulse_threshold_k: 0.5,
            min_pulse_window_s: 5.0,
            nn_min_ms: 300.0,
            nn_max_ms: 2000.0,
            sd_kind: SdKind::Sample,
            breath_ema_alpha: 0.2,
            breath_hysteresis_k: 0.1,
            breath_window_s: 20.0,
            min_cycle_s: 1.5,
            min_breath_window_s: 20.0,
            flat_epsilon: 1e-9,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("window needs at least {required_s} s of {channel} samples, got {actual_s:.3} s")]
    WindowTooShort {
        channel: Channel,
        required_s: f64,
        actual_s: f64,
    },
    #[error("need at least 2 peaks to build an NN series, got {0}")]
    TooFewPeaks(usize),
    #[error("empty window")]
    EmptyWindow,
    #[error("window has no {0} samples")]
    MissingChannel(Channel),
    #[error("invalid window {start_ms}..{end_ms}")]
    InvalidWindow { start_ms: u64, end_ms: u64 },
}

/// Half-open time window `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Window {
    pub fn new(start_ms: u64, end_ms: u64) -> Result<Self, MetricsError> {
        if start_ms >= end_ms {
            return Err(MetricsError::InvalidWindow { start_ms, end_ms });
        }
        Ok(Self { start_ms, end_ms })
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start_ms && t < self.end_ms
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Rolling mean and SD over a trailing time horizon.
#[derive(Debug, Clone)]
pub(crate) struct RollingStats {
    horizon_ms: f64,
    buf: VecDeque<(f64, f64)>,
    // values are shifted by the first one seen to limit cancellation
    shift: Option<f64>,
    sum: f64,
    sumsq: f64,
}

impl RollingStats {
    pub(crate) fn new(horizon_ms: f64) -> Self {
        Self {
            horizon_ms,
            buf: VecDeque::new(),
            shift: None,
            sum: 0.0,
            sumsq: 0.0,
        }
    }

    pub(crate) fn push(&mut self, t: f64, v: f64) {
        let shift = *self.shift.get_or_insert(v);
        let x = v - shift;
        self.buf.push_back((t, x));
        self.sum += x;
        self.sumsq += x * x;
        while let Some(&(t0, x0)) = self.buf.front() {
            if t - t0 > self.horizon_ms {
                self.buf.pop_front();
                self.sum -= x0;
                self.sumsq -= x0 * x0;
            } else {
                break;
            }
        }
        if self.buf.len() == 1 {
            // resync the running sums to kill accumulated drift
            self.sum = x;
            self.sumsq = x * x;
        }
    }

    pub(crate) fn mean(&self) -> f64 {
        match self.shift {
            Some(shift) if !self.buf.is_empty() => shift + self.sum / self.buf.len() as f64,
            _ => 0.0,
        }
    }

    pub(crate) fn sd(&self) -> f64 {
        let n = self.buf.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let m = self.sum / n;
        ((self.sumsq / n - m * m).max(0.0)).sqrt()
    }
}

/// Streaming pulse-peak detector: local maxima above a rolling adaptive
/// threshold with a refractory period. Peak times are refined by parabolic
/// interpolation over the three samples around the maximum.
#[derive(Debug, Clone)]
pub struct PeakDetector {
    refractory_ms: f64,
    threshold_k: f64,
    flat_epsilon: f64,
    stats: RollingStats,
    // (t, v, threshold, rolling sd) for the two most recent samples
    prev2: Option<(f64, f64)>,
    prev1: Option<(f64, f64, f64, f64)>,
    last_peak: Option<f64>,
}

impl PeakDetector {
    pub fn new(cfg: &MetricsConfig) -> Self {
        Self {
            refractory_ms: cfg.refractory_ms,
            threshold_k: cfg.pulse_threshold_k,
            flat_epsilon: cfg.flat_epsilon,
            stats: RollingStats::new(cfg.pulse_window_s * 1000.0),
            prev2: None,
            prev1: None,
            last_peak: None,
        }
    }

    /// Feeds one PPG sample; returns a peak time (ms) once it is confirmed,
    /// which happens one sample after the apex.
    pub fn push(&mut self, t: f64, v: f64) -> Option<f64> {
        self.stats.push(t, v);
        let sd = self.stats.sd();
        let thr = self.stats.mean() + self.threshold_k * sd;

        let mut found = None;
        if let (Some((t0, y0)), Some((t1, y1, thr1, sd1))) = (self.prev2, self.prev1) {
            if y1 > y0 && y1 >= v && y1 > thr1 && sd1 > self.flat_epsilon {
                let apex = refine_apex(t0, y0, t1, y1, t, v);
                let clear = self
                    .last_peak
                    .is_none_or(|last| apex - last >= self.refractory_ms);
                if clear {
                    self.last_peak = Some(apex);
                    found = Some(apex);
                }
            }
        }
        self.prev2 = self.prev1.map(|(t1, y1, _, _)| (t1, y1));
        self.prev1 = Some((t, v, thr, sd));
        found
    }
}

fn refine_apex(t0: f64, y0: f64, t1: f64, y1: f64, t2: f64, y2: f64) -> f64 {
    let denom = y0 - 2.0 * y1 + y2;
    if denom >= 0.0 {
        return t1;
    }
    let step = 0.5 * (t2 - t0);
    let offset = (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
    t1 + offset * step
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakDetection {
    pub peaks_ms: Vec<f64>,
    pub no_pulse: bool,
}

fn span_s(samples: &[&SensorSample]) -> f64 {
    match (samples.first(), samples.last()) {
        (Some(a), Some(b)) if samples.len() > 1 => {
            let span = (b.t - a.t) as f64;
            let step = span / (samples.len() - 1) as f64;
            (span + step) / 1000.0
        }
        _ => 0.0,
    }
}

fn channel_sd(samples: &[&SensorSample]) -> f64 {
    let n = samples.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = samples.iter().map(|s| s.value).sum::<f64>() / n;
    (samples
        .iter()
        .map(|s| (s.value - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Detects pulse peaks in the PPG samples of `window` (other channels are ignored).
pub fn detect_pulse_peaks(
    window: &[SensorSample],
    cfg: &MetricsConfig,
) -> Result<PeakDetection, MetricsError> {
    let ppg: Vec<&SensorSample> = window
        .iter()
        .filter(|s| s.channel == Channel::Ppg)
        .collect();
    let actual_s = span_s(&ppg);
    if actual_s + 1e-9 < cfg.min_pulse_window_s {
        return Err(MetricsError::WindowTooShort {
            channel: Channel::Ppg,
            required_s: cfg.min_pulse_window_s,
            actual_s,
        });
    }
    if channel_sd(&ppg) < cfg.flat_epsilon {
        return Ok(PeakDetection {
            peaks_ms: Vec::new(),
            no_pulse: true,
        });
    }
    let mut det = PeakDetector::new(cfg);
    let peaks_ms: Vec<f64> = ppg
        .iter()
        .filter_map(|s| det.push(s.t as f64, s.value))
        .collect();
    let no_pulse = peaks_ms.is_empty();
    Ok(PeakDetection { peaks_ms, no_pulse })
}

/// Artifact-cleaned NN intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NnSeries {
    pub intervals_ms: Vec<f64>,
    pub rejected_count: usize,
}

impl NnSeries {
    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.intervals_ms.is_empty() {
            None
        } else {
            Some(self.intervals_ms.iter().sum::<f64>() / self.intervals_ms.len() as f64)
        }
    }

    pub fn sd(&self, kind: SdKind) -> f64 {
        sd_of(&self.intervals_ms, kind)
    }
}

/// Successive peak differences, dropping intervals outside the plausibility bounds.
pub fn build_nn_series(peaks_ms: &[f64], cfg: &MetricsConfig) -> Result<NnSeries, MetricsError> {
    if peaks_ms.len() < 2 {
        return Err(MetricsError::TooFewPeaks(peaks_ms.len()));
    }
    let mut series = NnSeries::default();
    for w in peaks_ms.windows(2) {
        let d = w[1] - w[0];
        if (cfg.nn_min_ms..=cfg.nn_max_ms).contains(&d) {
            series.intervals_ms.push(d);
        } else {
            series.rejected_count += 1;
        }
    }
    Ok(series)
}

/// SDNN with the sample (n - 1) divisor; 0 for fewer than two intervals.
pub fn sdnn(series: &NnSeries) -> f64 {
    series.sd(SdKind::Sample)
}

pub(crate) fn sd_of(xs: &[f64], kind: SdKind) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let divisor = match kind {
        SdKind::Sample => (n - 1) as f64,
        SdKind::Population => n as f64,
    };
    (ss / divisor).sqrt()
}

/// Streaming breath-cycle counter.
///
/// The belt signal is EMA-smoothed, centered on its rolling mean, and a cycle
/// is counted when it rises through the upper edge of a hysteresis band after
/// having been below the lower edge. Cycles closer than `min_cycle_s` are ignored.
#[derive(Debug, Clone)]
pub struct BreathCycleDetector {
    alpha: f64,
    hysteresis_k: f64,
    min_cycle_ms: f64,
    flat_epsilon: f64,
    ema: Option<f64>,
    stats: RollingStats,
    armed: bool,
    prev: Option<(f64, f64)>,
    last_cycle: Option<f64>,
    crossings: Vec<f64>,
}

impl BreathCycleDetector {
    pub fn new(cfg: &MetricsConfig) -> Self {
        Self {
            alpha: cfg.breath_ema_alpha,
            hysteresis_k: cfg.breath_hysteresis_k,
            min_cycle_ms: cfg.min_cycle_s * 1000.0,
            flat_epsilon: cfg.flat_epsilon,
            ema: None,
            stats: RollingStats::new(cfg.breath_window_s * 1000.0),
            armed: false,
            prev: None,
            last_cycle: None,
            crossings: Vec::new(),
        }
    }

    /// Feeds one belt sample; returns the cycle time when a cycle completes.
    pub fn push(&mut self, t: f64, v: f64) -> Option<f64> {
        let e = match self.ema {
            None => v,
            Some(prev) => prev + self.alpha * (v - prev),
        };
        self.ema = Some(e);
        self.stats.push(t, e);
        let sd = self.stats.sd();
        let y = e - self.stats.mean();
        let band = self.hysteresis_k * sd;

        let mut found = None;
        if sd > self.flat_epsilon {
            if y < -band {
                self.armed = true;
            } else if self.armed && y > band {
                let tc = match self.prev {
                    Some((tp, yp)) if yp < band && y > yp => tp + (band - yp) / (y - yp) * (t - tp),
                    _ => t,
                };
                self.armed = false;
                if self
                    .last_cycle
                    .is_none_or(|last| tc - last >= self.min_cycle_ms)
                {
                    self.last_cycle = Some(tc);
                    self.crossings.push(tc);
                    found = Some(tc);
                }
            }
        }
        self.prev = Some((t, y));
        found
    }

    pub fn crossings(&self) -> &[f64] {
        &self.crossings
    }

    /// Cycles per minute. With two or more cycle events the rate comes from the
    /// mean cycle period; otherwise cycles are divided by the window length.
    pub fn rate_cpm(&self, window_ms: f64) -> f64 {
        rate_from_crossings(&self.crossings, window_ms)
    }
}

fn rate_from_crossings(crossings: &[f64], window_ms: f64) -> f64 {
    match crossings {
        [first, .., last] if last > first => {
            60_000.0 * (crossings.len() - 1) as f64 / (last - first)
        }
        _ if window_ms > 0.0 => crossings.len() as f64 * 60_000.0 / window_ms,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BreathRate {
    pub cpm: f64,
    pub cycles: usize,
    pub cycle_times_ms: Vec<f64>,
    pub no_breath: bool,
}

/// Respiration rate over the breath samples of `window`.
pub fn respiration_rate(
    window: &[SensorSample],
    cfg: &MetricsConfig,
) -> Result<BreathRate, MetricsError> {
    let breath: Vec<&SensorSample> = window
        .iter()
        .filter(|s| s.channel == Channel::Breath)
        .collect();
    let actual_s = span_s(&breath);
    if actual_s + 1e-9 < cfg.min_breath_window_s {
        return Err(MetricsError::WindowTooShort {
            channel: Channel::Breath,
            required_s: cfg.min_breath_window_s,
            actual_s,
        });
    }
    if channel_sd(&breath) < cfg.flat_epsilon {
        return Ok(BreathRate {
            no_breath: true,
            ..Default::default()
        });
    }
    let mut det = BreathCycleDetector::new(cfg);
    for s in &breath {
        det.push(s.t as f64, s.value);
    }
    let cycles = det.crossings().len();
    Ok(BreathRate {
        cpm: det.rate_cpm(actual_s * 1000.0),
        cycles,
        cycle_times_ms: det.crossings,
        no_breath: cycles == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub sdnn_ms: f64,
    pub resp_rate_cpm: f64,
    pub n_beats: usize,
    pub n_breath_cycles: usize,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialMetric {
    NoPulse,
    NoBreath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub metrics: PhaseMetrics,
    pub nn: NnSeries,
    pub warnings: Vec<PartialMetric>,
}

/// Incremental per-phase aggregation. Samples outside the window are ignored.
#[derive(Debug, Clone)]
pub struct PhaseAccumulator {
    window: Window,
    cfg: MetricsConfig,
    peaks: PeakDetector,
    breath: BreathCycleDetector,
    peak_times: Vec<f64>,
    ppg: ChannelSpan,
    belt: ChannelSpan,
}

#[derive(Debug, Clone, Default)]
struct ChannelSpan {
    first: Option<u64>,
    last: Option<u64>,
    n: usize,
    mean: f64,
    m2: f64,
}

impl ChannelSpan {
    fn push(&mut self, t: u64, v: f64) {
        self.first.get_or_insert(t);
        self.last = Some(t);
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn span_s(&self) -> f64 {
        match (self.first, self.last) {
            (Some(a), Some(b)) if self.n > 1 => {
                let span = (b - a) as f64;
                (span + span / (self.n - 1) as f64) / 1000.0
            }
            _ => 0.0,
        }
    }

    fn sd(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

impl PhaseAccumulator {
    pub fn new(window: Window, cfg: &MetricsConfig) -> Self {
        Self {
            window,
            cfg: cfg.clone(),
            peaks: PeakDetector::new(cfg),
            breath: BreathCycleDetector::new(cfg),
            peak_times: Vec::new(),
            ppg: ChannelSpan::default(),
            belt: ChannelSpan::default(),
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Moves the window end, used when a live phase is closed early or late.
    pub fn set_end(&mut self, end_ms: u64) {
        self.window.end_ms = end_ms.max(self.window.start_ms + 1);
    }

    pub fn push(&mut self, s: &SensorSample) {
        if !self.window.contains(s.t) {
            return;
        }
        let t = s.t as f64;
        match s.channel {
            Channel::Ppg => {
                self.ppg.push(s.t, s.value);
                if let Some(p) = self.peaks.push(t, s.value) {
                    self.peak_times.push(p);
                }
            }
            Channel::Breath => {
                self.belt.push(s.t, s.value);
                self.breath.push(t, s.value);
            }
        }
    }

    pub fn beats_so_far(&self) -> usize {
        self.peak_times.len()
    }

    pub fn breath_cycles_so_far(&self) -> usize {
        self.breath.crossings().len()
    }

    /// Current respiration-rate estimate, for live readouts.
    pub fn live_resp_rate(&self) -> f64 {
        self.breath.rate_cpm(self.belt.span_s() * 1000.0)
    }

    pub fn finish(&self) -> Result<PhaseReport, MetricsError> {
        if self.ppg.n == 0 && self.belt.n == 0 {
            return Err(MetricsError::EmptyWindow);
        }
        if self.ppg.n == 0 {
            return Err(MetricsError::MissingChannel(Channel::Ppg));
        }
        if self.belt.n == 0 {
            return Err(MetricsError::MissingChannel(Channel::Breath));
        }
        let ppg_s = self.ppg.span_s();
        if ppg_s + 1e-9 < self.cfg.min_pulse_window_s {
            return Err(MetricsError::WindowTooShort {
                channel: Channel::Ppg,
                required_s: self.cfg.min_pulse_window_s,
                actual_s: ppg_s,
            });
        }
        let belt_s = self.belt.span_s();
        if belt_s + 1e-9 < self.cfg.min_breath_window_s {
            return Err(MetricsError::WindowTooShort {
                channel: Channel::Breath,
                required_s: self.cfg.min_breath_window_s,
                actual_s: belt_s,
            });
        }

        let mut warnings = Vec::new();
        let flat_ppg = self.ppg.sd() < self.cfg.flat_epsilon;
        let peaks: &[f64] = if flat_ppg { &[] } else { &self.peak_times };
        if peaks.is_empty() {
            warnings.push(PartialMetric::NoPulse);
        }
        let nn = build_nn_series(peaks, &self.cfg).unwrap_or_default();
        let sdnn_ms = nn.sd(self.cfg.sd_kind);

        let flat_belt = self.belt.sd() < self.cfg.flat_epsilon;
        let crossings: &[f64] = if flat_belt {
            &[]
        } else {
            self.breath.crossings()
        };
        if crossings.is_empty() {
            warnings.push(PartialMetric::NoBreath);
        }
        let resp_rate_cpm = rate_from_crossings(crossings, belt_s * 1000.0);

        Ok(PhaseReport {
            metrics: PhaseMetrics {
                sdnn_ms,
                resp_rate_cpm,
                n_beats: peaks.len(),
                n_breath_cycles: crossings.len(),
                window: self.window,
            },
            nn,
            warnings,
        })
    }
}

/// Batch per-phase metrics over `window`.
pub fn phase_metrics(
    samples: &[SensorSample],
    window: Window,
    cfg: &MetricsConfig,
) -> Result<PhaseReport, MetricsError> {
    let mut acc = PhaseAccumulator::new(window, cfg);
    for s in samples {
        acc.push(s);
    }
    acc.finish()
}
