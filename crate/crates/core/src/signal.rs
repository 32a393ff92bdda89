//! Timestamped sensor samples and their sources.
//!
//! Three interchangeable origins feed the rest of the engine: JSONL replay
//! files, a seeded synthetic generator that also records its ground truth,
//! and the [`SampleSource`] seam that live device adapters implement.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default breath belt sampling rate.
pub const DEFAULT_BREATH_HZ: f64 = 25.0;
/// Default PPG sampling rate.
pub const DEFAULT_PPG_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Breath,
    Ppg,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Breath => f.write_str("breath"),
            Channel::Ppg => f.write_str("ppg"),
        }
    }
}

/// One raw reading. `t` is milliseconds since the session epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: u64,
    #[serde(rename = "ch")]
    pub channel: Channel,
    #[serde(rename = "v")]
    pub value: f64,
}

impl SensorSample {
    pub fn new(t: u64, channel: Channel, value: f64) -> Self {
        Self { t, channel, value }
    }
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid replay speed {0}; expected a finite value >= 0")]
    InvalidSpeed(f64),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optional first line of a replay file carrying the channel rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub hdr: bool,
    pub breath_hz: f64,
    pub ppg_hz: f64,
}

impl Default for ReplayHeader {
    fn default() -> Self {
        Self {
            hdr: true,
            breath_hz: DEFAULT_BREATH_HZ,
            ppg_hz: DEFAULT_PPG_HZ,
        }
    }
}

/// A timestamp that had to be moved forward to keep its channel strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestampWarning {
    pub line: usize,
    pub channel: Channel,
    pub original_t: u64,
    pub restamped_t: u64,
}

impl fmt::Display for RestampWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: non-monotone {} timestamp {} re-stamped to {}",
            self.line, self.channel, self.original_t, self.restamped_t
        )
    }
}

/// A parsed, normalized replay: samples in timestamp order across channels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub header: Option<ReplayHeader>,
    pub samples: Vec<SensorSample>,
    pub warnings: Vec<RestampWarning>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    hdr: bool,
    #[serde(default = "default_breath_hz")]
    breath_hz: f64,
    #[serde(default = "default_ppg_hz")]
    ppg_hz: f64,
}

fn default_breath_hz() -> f64 {
    DEFAULT_BREATH_HZ
}

fn default_ppg_hz() -> f64 {
    DEFAULT_PPG_HZ
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    t: u64,
    ch: Channel,
    v: f64,
}

/// Parses replay JSONL text. Blank lines are skipped; a header is only
/// accepted on the first non-blank line.
pub fn parse_replay(text: &str) -> Result<Replay, SignalError> {
    let mut replay = Replay::default();
    let mut last_t: HashMap<Channel, u64> = HashMap::new();
    let mut seen_content = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| SignalError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if value.get("hdr").is_some() {
            if seen_content {
                return Err(SignalError::Parse {
                    line: line_no,
                    message: "header must be the first line".into(),
                });
            }
            let hdr: HeaderLine =
                serde_json::from_value(value).map_err(|e| SignalError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if !(hdr.breath_hz.is_finite() && hdr.breath_hz > 0.0)
                || !(hdr.ppg_hz.is_finite() && hdr.ppg_hz > 0.0)
            {
                return Err(SignalError::Parse {
                    line: line_no,
                    message: "header rates must be positive".into(),
                });
            }
            replay.header = Some(ReplayHeader {
                hdr: hdr.hdr,
                breath_hz: hdr.breath_hz,
                ppg_hz: hdr.ppg_hz,
            });
            seen_content = true;
            continue;
        }
        seen_content = true;
        let s: SampleLine = serde_json::from_value(value).map_err(|e| SignalError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !s.v.is_finite() {
            return Err(SignalError::Parse {
                line: line_no,
                message: "sample value must be finite".into(),
            });
        }
        let mut t = s.t;
        if let Some(&prev) = last_t.get(&s.ch) {
            if t <= prev {
                let restamped = prev + 1;
                replay.warnings.push(RestampWarning {
                    line: line_no,
                    channel: s.ch,
                    original_t: t,
                    restamped_t: restamped,
                });
                t = restamped;
            }
        }
        last_t.insert(s.ch, t);
        replay.samples.push(SensorSample::new(t, s.ch, s.v));
    }

    // stable: ties keep file order
    replay.samples.sort_by_key(|s| s.t);
    Ok(replay)
}

/// Serializes samples in the replay line format, with an optional header.
pub fn write_replay(header: Option<&ReplayHeader>, samples: &[SensorSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 40);
    if let Some(h) = header {
        out.push_str(&serde_json::to_string(h).expect("header serializes"));
        out.push('\n');
    }
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    out
}

pub fn read_replay_file(path: impl AsRef<Path>) -> Result<Replay, SignalError> {
    let text = std::fs::read_to_string(path)?;
    parse_replay(&text)
}

/// Opens a replay file as a paced stream. `speed == 0` emits as fast as possible.
pub fn open_replay(path: impl AsRef<Path>, speed: f64) -> Result<PacedStream, SignalError> {
    let replay = read_replay_file(path)?;
    PacedStream::new(replay.samples, speed)
}

/// Emits samples at `speed` times their recorded pace.
#[derive(Debug)]
pub struct PacedStream {
    samples: std::vec::IntoIter<SensorSample>,
    speed: f64,
    origin: Option<(Instant, u64)>,
}

impl PacedStream {
    pub fn new(samples: Vec<SensorSample>, speed: f64) -> Result<Self, SignalError> {
        if !speed.is_finite() || speed < 0.0 {
            return Err(SignalError::InvalidSpeed(speed));
        }
        Ok(Self {
            samples: samples.into_iter(),
            speed,
            origin: None,
        })
    }
}

impl Iterator for PacedStream {
    type Item = SensorSample;

    fn next(&mut self) -> Option<SensorSample> {
        let sample = self.samples.next()?;
        if self.speed > 0.0 {
            let (start, t0) = *self.origin.get_or_insert((Instant::now(), sample.t));
            let offset_ms = (sample.t - t0) as f64 / self.speed;
            let due = start + Duration::from_secs_f64(offset_ms / 1000.0);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        Some(sample)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.samples.size_hint()
    }
}

/// Seam for live device adapters (serial, BLE, ...). Returns `None` when the
/// device has closed.
pub trait SampleSource: Send {
    fn next_sample(&mut self) -> Option<SensorSample>;

    /// Nominal channel rates, carried into replay headers when recording.
    fn rates(&self) -> ReplayHeader {
        ReplayHeader::default()
    }
}

impl SampleSource for PacedStream {
    fn next_sample(&mut self) -> Option<SensorSample> {
        self.next()
    }
}

/// In-memory source over already-collected samples.
#[derive(Debug, Clone)]
pub struct VecSource {
    samples: std::vec::IntoIter<SensorSample>,
}

impl VecSource {
    pub fn new(samples: Vec<SensorSample>) -> Self {
        Self {
            samples: samples.into_iter(),
        }
    }
}

impl SampleSource for VecSource {
    fn next_sample(&mut self) -> Option<SensorSample> {
        self.samples.next()
    }
}

/// Parameters of the synthetic breath + PPG generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPhysioSpec {
    pub duration_s: f64,
    pub breath_freq_hz: f64,
    pub breath_amp: f64,
    pub heart_rate_bpm: f64,
    pub nn_sd_ms: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticPhysioSpec {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            breath_freq_hz: 0.25,
            breath_amp: 1.0,
            heart_rate_bpm: 60.0,
            nn_sd_ms: 0.0,
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticPhysioSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: &str| Err(SignalError::InvalidSpec(m.to_string()));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive");
        }
        if !(0.03..=1.0).contains(&self.breath_freq_hz) {
            return bad("breath_freq_hz must lie in [0.03, 1.0]");
        }
        if !(30.0..=200.0).contains(&self.heart_rate_bpm) {
            return bad("heart_rate_bpm must lie in [30, 200]");
        }
        if !(self.nn_sd_ms.is_finite() && self.nn_sd_ms >= 0.0) {
            return bad("nn_sd_ms must be >= 0");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd must be >= 0");
        }
        if !(self.breath_amp.is_finite() && self.breath_amp > 0.0) {
            return bad("breath_amp must be positive");
        }
        Ok(())
    }

    pub fn mean_nn_ms(&self) -> f64 {
        60_000.0 / self.heart_rate_bpm
    }
}

/// What the generator actually produced, for oracle use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Beat (pulse apex) times in ms, strictly inside the recording.
    pub beat_times_ms: Vec<f64>,
    /// Successive differences of `beat_times_ms`.
    pub nn_intervals_ms: Vec<f64>,
    /// Completed breath cycles.
    pub breath_cycles: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticRecording {
    pub header: ReplayHeader,
    pub samples: Vec<SensorSample>,
    pub truth: GroundTruth,
}

impl SyntheticRecording {
    pub fn channel(&self, channel: Channel) -> impl Iterator<Item = &SensorSample> {
        self.samples.iter().filter(move |s| s.channel == channel)
    }
}

/// Gaussian width of the systolic pulse.
const PULSE_SIGMA_MS: f64 = 60.0;
/// Beats are kept this far from the recording edges so every apex is a
/// detectable interior maximum.
const BEAT_EDGE_MS: f64 = 150.0;

pub fn generate_synthetic(spec: &SyntheticPhysioSpec) -> Result<SyntheticRecording, SignalError> {
    generate_with_offset(spec, 0)
}

/// Generates consecutive segments on one timeline, e.g. a stressed phase
/// followed by a relaxed one.
pub fn generate_segments(specs: &[SyntheticPhysioSpec]) -> Result<SyntheticRecording, SignalError> {
    let mut out = SyntheticRecording {
        header: ReplayHeader::default(),
        ..Default::default()
    };
    let mut offset = 0u64;
    for spec in specs {
        let seg = generate_with_offset(spec, offset)?;
        if let (Some(&last), Some(&first)) = (
            out.truth.beat_times_ms.last(),
            seg.truth.beat_times_ms.first(),
        ) {
            out.truth.nn_intervals_ms.push(first - last);
        }
        out.truth.beat_times_ms.extend(&seg.truth.beat_times_ms);
        out.truth.nn_intervals_ms.extend(&seg.truth.nn_intervals_ms);
        out.truth.breath_cycles += seg.truth.breath_cycles;
        out.samples.extend(seg.samples);
        offset += (spec.duration_s * 1000.0).round() as u64;
    }
    out.samples.sort_by_key(|s| (s.t, s.channel));
    Ok(out)
}

fn generate_with_offset(
    spec: &SyntheticPhysioSpec,
    offset_ms: u64,
) -> Result<SyntheticRecording, SignalError> {
    spec.validate()?;
    let duration_ms = spec.duration_s * 1000.0;
    let breath_dt = 1000.0 / DEFAULT_BREATH_HZ;
    let ppg_dt = 1000.0 / DEFAULT_PPG_HZ;

    let mut breath_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    breath_rng.set_stream(1);
    let mut beat_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    beat_rng.set_stream(2);
    let mut ppg_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ppg_rng.set_stream(3);

    let noise = |rng: &mut ChaCha8Rng| -> f64 {
        if spec.noise_sd > 0.0 {
            Normal::new(0.0, spec.noise_sd)
                .expect("sd checked")
                .sample(rng)
        } else {
            0.0
        }
    };

    let mut samples = Vec::new();

    let n_breath = (duration_ms / breath_dt).ceil() as u64;
    for i in 0..n_breath {
        let t = i as f64 * breath_dt;
        if t >= duration_ms {
            break;
        }
        let clean = spec.breath_amp * (2.0 * PI * spec.breath_freq_hz * t / 1000.0).sin();
        let v = clean + noise(&mut breath_rng);
        samples.push(SensorSample::new(
            offset_ms + t.round() as u64,
            Channel::Breath,
            v,
        ));
    }

    // Beat times: first apex half an interval in, then seeded intervals.
    let mean_nn = spec.mean_nn_ms();
    let nn_dist = Normal::new(mean_nn, spec.nn_sd_ms.max(0.0)).expect("sd checked");
    let lo = (mean_nn - 3.5 * spec.nn_sd_ms).max(320.0);
    let hi = (mean_nn + 3.5 * spec.nn_sd_ms).min(1950.0);
    let mut beats = Vec::new();
    let mut t = BEAT_EDGE_MS.max(mean_nn / 2.0);
    while t <= duration_ms - BEAT_EDGE_MS {
        beats.push(t);
        let interval = if spec.nn_sd_ms > 0.0 {
            loop {
                let x = nn_dist.sample(&mut beat_rng);
                if (lo..=hi).contains(&x) {
                    break x;
                }
            }
        } else {
            mean_nn
        };
        t += interval;
    }

    let n_ppg = (duration_ms / ppg_dt).ceil() as u64;
    let reach = 6.0 * PULSE_SIGMA_MS;
    let mut first_beat = 0usize;
    for i in 0..n_ppg {
        let ts = i as f64 * ppg_dt;
        if ts >= duration_ms {
            break;
        }
        while first_beat < beats.len() && beats[first_beat] < ts - reach {
            first_beat += 1;
        }
        let mut v = 0.0;
        for &b in beats[first_beat..].iter().take_while(|&&b| b <= ts + reach) {
            let z = (ts - b) / PULSE_SIGMA_MS;
            v += (-0.5 * z * z).exp();
        }
        v += noise(&mut ppg_rng);
        samples.push(SensorSample::new(
            offset_ms + ts.round() as u64,
            Channel::Ppg,
            v,
        ));
    }

    samples.sort_by_key(|s| (s.t, s.channel));

    let off = offset_ms as f64;
    let beat_times_ms: Vec<f64> = beats.iter().map(|b| b + off).collect();
    let nn_intervals_ms = beat_times_ms.windows(2).map(|w| w[1] - w[0]).collect();
    let breath_cycles = (spec.duration_s * spec.breath_freq_hz + 1e-9).floor() as usize;

    Ok(SyntheticRecording {
        header: ReplayHeader::default(),
        samples,
        truth: GroundTruth {
            beat_times_ms,
            nn_intervals_ms,
            breath_cycles,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_breath_samples_pass_through() {
        let text = r#"{"t":0,"ch":"breath","v":0.1}
{"t":10,"ch":"breath","v":0.2}
{"t":20,"ch":"breath","v":0.3}
"#;
        let stream = PacedStream::new(parse_replay(text).unwrap().samples, 0.0).unwrap();
        let got: Vec<_> = stream.collect();
        assert_eq!(
            got,
            vec![
                SensorSample::new(0, Channel::Breath, 0.1),
                SensorSample::new(10, Channel::Breath, 0.2),
                SensorSample::new(20, Channel::Breath, 0.3),
            ]
        );
    }

    #[test]
    fn duplicate_timestamp_is_restamped() {
        let text = r#"{"t":0,"ch":"ppg","v":1}
{"t":10,"ch":"ppg","v":2}
{"t":10,"ch":"ppg","v":3}
"#;
        let r = parse_replay(text).unwrap();
        let ts: Vec<u64> = r.samples.iter().map(|s| s.t).collect();
        assert_eq!(ts, vec![0, 10, 11]);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].original_t, 10);
        assert_eq!(r.warnings[0].restamped_t, 11);
        assert_eq!(r.warnings[0].line, 3);
    }

    #[test]
    fn monotonicity_is_per_channel() {
        let text = r#"{"t":10,"ch":"ppg","v":1}
{"t":10,"ch":"breath","v":2}
"#;
        let r = parse_replay(text).unwrap();
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"t\":0,\"ch\":\"breath\",\"v\":1}\n\nnot json\n";
        match parse_replay(text) {
            Err(SignalError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_replay(r#"{"t":-1,"ch":"breath","v":1}"#),
            Err(SignalError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_replay(r#"{"t":1,"ch":"ecg","v":1}"#),
            Err(SignalError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn header_only_on_first_line() {
        let ok = "{\"hdr\": true, \"breath_hz\": 25, \"ppg_hz\": 50}\n{\"t\":0,\"ch\":\"breath\",\"v\":1}\n";
        let r = parse_replay(ok).unwrap();
        assert_eq!(r.header.unwrap().ppg_hz, 50.0);
        let late = "{\"t\":0,\"ch\":\"breath\",\"v\":1}\n{\"hdr\": true, \"breath_hz\": 25, \"ppg_hz\": 50}\n";
        assert!(matches!(
            parse_replay(late),
            Err(SignalError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn negative_speed_rejected() {
        assert!(PacedStream::new(vec![], -1.0).is_err());
        assert!(PacedStream::new(vec![], f64::NAN).is_err());
    }

    #[test]
    fn quarter_hertz_minute_has_fifteen_cycles() {
        let rec = generate_synthetic(&SyntheticPhysioSpec::default()).unwrap();
        assert_eq!(rec.truth.breath_cycles, 15);
        assert_eq!(rec.channel(Channel::Breath).count(), 1500);
        assert_eq!(rec.channel(Channel::Ppg).count(), 3000);
    }

    #[test]
    fn zero_nn_sd_gives_constant_intervals() {
        let rec = generate_synthetic(&SyntheticPhysioSpec {
            heart_rate_bpm: 72.0,
            ..Default::default()
        })
        .unwrap();
        let first = rec.truth.nn_intervals_ms[0];
        assert!(rec
            .truth
            .nn_intervals_ms
            .iter()
            .all(|&x| (x - first).abs() < 1e-9));
        assert!((first - 60_000.0 / 72.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticPhysioSpec {
            nn_sd_ms: 40.0,
            noise_sd: 0.1,
            seed: 42,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(
            write_replay(None, &a.samples),
            write_replay(None, &b.samples)
        );
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn spec_guards() {
        let bad = [
            SyntheticPhysioSpec {
                breath_freq_hz: 0.01,
                ..Default::default()
            },
            SyntheticPhysioSpec {
                breath_freq_hz: 1.5,
                ..Default::default()
            },
            SyntheticPhysioSpec {
                heart_rate_bpm: 20.0,
                ..Default::default()
            },
            SyntheticPhysioSpec {
                heart_rate_bpm: 220.0,
                ..Default::default()
            },
            SyntheticPhysioSpec {
                nn_sd_ms: -1.0,
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(generate_synthetic(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn segments_share_one_timeline() {
        let a = SyntheticPhysioSpec {
            duration_s: 20.0,
            ..Default::default()
        };
        let b = SyntheticPhysioSpec {
            duration_s: 30.0,
            seed: 3,
            ..Default::default()
        };
        let rec = generate_segments(&[a, b]).unwrap();
        let last = rec.samples.last().unwrap().t;
        assert!((49_900..50_000).contains(&last));
        assert_eq!(
            rec.truth.nn_intervals_ms.len() + 1,
            rec.truth.beat_times_ms.len()
        );
    }
}
