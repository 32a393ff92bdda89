//! Jobs for the external generative services (panorama, snippets, speech)
//! and the client seam they run behind.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::profile::{ClientError, SafePlaceProfile};
use super::{Lexicon, Modality, PersonalizeError, Snippet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    PanoramaPreview,
    PanoramaFinal,
    ScriptSnippets,
    Tts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoramaPreset {
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub sampler: &'static str,
    pub cfg: f64,
}

impl PanoramaPreset {
    pub const PREVIEW: PanoramaPreset = PanoramaPreset {
        width: 1024,
        height: 512,
        steps: 20,
        sampler: "LCM",
        cfg: 7.0,
    };
    pub const FINAL: PanoramaPreset = PanoramaPreset {
        width: 2048,
        height: 1024,
        steps: 30,
        sampler: "DPM++ 2M Karras",
        cfg: 7.0,
    };

    pub fn for_kind(kind: JobKind) -> Option<Self> {
        match kind {
            JobKind::PanoramaPreview => Some(Self::PREVIEW),
            JobKind::PanoramaFinal => Some(Self::FINAL),
            _ => None,
        }
    }

    pub fn params(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            (
                "size".to_string(),
                json!(format!("{}x{}", self.width, self.height)),
            ),
            ("steps".to_string(), json!(self.steps)),
            ("sampler".to_string(), json!(self.sampler)),
            ("cfg".to_string(), json!(self.cfg)),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "value")]
pub enum JobInput {
    Prompt(String),
    Profile(SafePlaceProfile),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub kind: JobKind,
    pub input: JobInput,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    /// Reference to the visitor's sketch for sketch-conditioned panoramas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch_ref: Option<String>,
}

impl GenerationJob {
    pub fn panorama_preview(prompt: impl Into<String>, sketch_ref: Option<String>) -> Self {
        Self {
            kind: JobKind::PanoramaPreview,
            input: JobInput::Prompt(prompt.into()),
            params: PanoramaPreset::PREVIEW.params(),
            sketch_ref,
        }
    }

    pub fn panorama_final(prompt: impl Into<String>, sketch_ref: Option<String>) -> Self {
        Self {
            kind: JobKind::PanoramaFinal,
            input: JobInput::Prompt(prompt.into()),
            params: PanoramaPreset::FINAL.params(),
            sketch_ref,
        }
    }

    pub fn script_snippets(profile: SafePlaceProfile) -> Self {
        Self {
            kind: JobKind::ScriptSnippets,
            input: JobInput::Profile(profile),
            params: BTreeMap::new(),
            sketch_ref: None,
        }
    }

    pub fn tts(text: impl Into<String>) -> Self {
        Self {
            kind: JobKind::Tts,
            input: JobInput::Text(text.into()),
            params: BTreeMap::new(),
            sketch_ref: None,
        }
    }

    pub fn validate(&self) -> Result<(), PersonalizeError> {
        if let Some(preset) = PanoramaPreset::for_kind(self.kind) {
            if self.params != preset.params() {
                return Err(PersonalizeError::PresetMismatch(self.kind));
            }
        }
        let input_ok = matches!(
            (self.kind, &self.input),
            (
                JobKind::PanoramaPreview | JobKind::PanoramaFinal,
                JobInput::Prompt(_)
            ) | (JobKind::ScriptSnippets, JobInput::Profile(_))
                | (JobKind::Tts, JobInput::Text(_))
        );
        if !input_ok {
            return Err(PersonalizeError::ClientOutput(format!(
                "{:?} job cannot take this input",
                self.kind
            )));
        }
        Ok(())
    }

    fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("job serializes");
        Sha256::digest(json.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AssetRef {
    Image {
        path: PathBuf,
        width: u32,
        height: u32,
    },
    Audio {
        path: PathBuf,
        duration_ms: u64,
    },
    Snippets {
        snippets: Vec<Snippet>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub kind: JobKind,
    pub asset: AssetRef,
}

pub trait GenerationClient: Send + Sync {
    fn run(&self, job: &GenerationJob, out_dir: &Path) -> Result<AssetRef, ClientError>;
}

/// Tracks in-flight jobs; at most one per (session, kind).
#[derive(Debug, Clone, Default)]
pub struct JobTracker {
    running: Arc<Mutex<HashSet<(String, JobKind)>>>,
}

#[derive(Debug)]
pub struct JobGuard {
    running: Arc<Mutex<HashSet<(String, JobKind)>>>,
    key: (String, JobKind),
}

impl Drop for JobGuard {
    fn drop(&mut self) {
        self.running
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&self.key);
    }
}

impl JobTracker {
    pub fn begin(&self, session: &str, kind: JobKind) -> Result<JobGuard, PersonalizeError> {
        let key = (session.to_string(), kind);
        let mut running = self.running.lock().unwrap_or_else(|e| e.into_inner());
        if !running.insert(key.clone()) {
            return Err(PersonalizeError::JobInFlight {
                session: session.to_string(),
                kind,
            });
        }
        Ok(JobGuard {
            running: Arc::clone(&self.running),
            key,
        })
    }

    pub fn in_flight(&self, session: &str, kind: JobKind) -> bool {
        self.running
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .contains(&(session.to_string(), kind))
    }
}

pub fn submit_job(
    tracker: &JobTracker,
    session: &str,
    job: &GenerationJob,
    client: &dyn GenerationClient,
    out_dir: &Path,
) -> Result<JobResult, PersonalizeError> {
    job.validate()?;
    let _guard = tracker.begin(session, job.kind)?;
    match client.run(job, out_dir) {
        Ok(asset) => Ok(JobResult {
            kind: job.kind,
            asset,
        }),
        Err(e) => Err(PersonalizeError::Job {
            kind: job.kind,
            retriable: e.retriable(),
            message: e.to_string(),
            job: Box::new(job.clone()),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFailure {
    Timeout,
    Unavailable,
}

/// Offline stand-in for the generative services. Panoramas are gradient
/// PNGs at the preset size, speech is a quiet tone whose length follows the
/// word count, and snippets are built from profile entries.
#[derive(Debug, Clone, Default)]
pub struct MockGenerationClient {
    pub fail: Option<MockFailure>,
}

impl MockGenerationClient {
    fn write_png(path: &Path, w: u32, h: u32, seed: u8) -> Result<(), ClientError> {
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc
            .write_header()
            .map_err(|e| ClientError::Unavailable(e.to_string()))?;
        let mut data = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                data.push((x * 255 / w.max(1)) as u8);
                data.push((y * 255 / h.max(1)) as u8);
                data.push(seed);
            }
        }
        writer
            .write_image_data(&data)
            .map_err(|e| ClientError::Unavailable(e.to_string()))?;
        Ok(())
    }

    fn write_wav(path: &Path, duration_ms: u64) -> Result<(), ClientError> {
        const RATE: u32 = 16_000;
        let n = (u64::from(RATE) * duration_ms / 1000) as u32;
        let mut f = BufWriter::new(File::create(path)?);
        let data_len = n * 2;
        f.write_all(b"RIFF")?;
        f.write_all(&(36 + data_len).to_le_bytes())?;
        f.write_all(b"WAVEfmt ")?;
        f.write_all(&16u32.to_le_bytes())?;
        f.write_all(&1u16.to_le_bytes())?;
        f.write_all(&1u16.to_le_bytes())?;
        f.write_all(&RATE.to_le_bytes())?;
        f.write_all(&(RATE * 2).to_le_bytes())?;
        f.write_all(&2u16.to_le_bytes())?;
        f.write_all(&16u16.to_le_bytes())?;
        f.write_all(b"data")?;
        f.write_all(&data_len.to_le_bytes())?;
        for i in 0..n {
            let t = f64::from(i) / f64::from(RATE);
            let v = (1000.0 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()) as i16;
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn snippets_for(profile: &SafePlaceProfile) -> Vec<Snippet> {
        let lex = Lexicon::default();
        let mut out = Vec::new();
        let mut push = |text: String, m: Modality| {
            let id = format!("{}{}", m.name(), out.len() + 1);
            out.push(Snippet::new(id, text, m, &lex));
        };
        for m in Modality::SENSORY {
            for detail in profile.senses.get(&m).into_iter().flatten() {
                push(
                    format!("As you mentioned before, there is {detail} here."),
                    m,
                );
            }
        }
        for e in &profile.elements {
            push(
                format!("Just as you told me, the {} is here with you.", e.name),
                Modality::Memory,
            );
        }
        for mem in &profile.memories {
            push(
                format!("You told me about {mem}. Let that memory stay with you."),
                Modality::Memory,
            );
        }
        for a in &profile.desired_activities {
            push(
                format!("As you said, here you can {a}."),
                Modality::Activity,
            );
        }
        out
    }
}

impl GenerationClient for MockGenerationClient {
    fn run(&self, job: &GenerationJob, out_dir: &Path) -> Result<AssetRef, ClientError> {
        match self.fail {
            Some(MockFailure::Timeout) => return Err(ClientError::Timeout),
            Some(MockFailure::Unavailable) => {
                return Err(ClientError::Unavailable("mock outage".into()))
            }
            None => {}
        }
        std::fs::create_dir_all(out_dir)?;
        let tag = job.digest();
        match (&job.input, PanoramaPreset::for_kind(job.kind)) {
            (JobInput::Prompt(prompt), Some(p)) => {
                let name = match job.kind {
                    JobKind::PanoramaPreview => "preview",
                    _ => "panorama",
                };
                let path = out_dir.join(format!("{name}-{tag}.png"));
                let seed = Sha256::digest(prompt.as_bytes())[0];
                Self::write_png(&path, p.width, p.height, seed)?;
                Ok(AssetRef::Image {
                    path,
                    width: p.width,
                    height: p.height,
                })
            }
            (JobInput::Text(text), None) => {
                let words = text.split_whitespace().count() as u64;
                let duration_ms = (words * 400).clamp(500, 600_000);
                let path = out_dir.join(format!("tts-{tag}.wav"));
                Self::write_wav(&path, duration_ms)?;
                Ok(AssetRef::Audio { path, duration_ms })
            }
            (JobInput::Profile(profile), None) => Ok(AssetRef::Snippets {
                snippets: Self::snippets_for(profile),
            }),
            _ => Err(ClientError::Unavailable("unsupported job input".into())),
        }
    }
}
