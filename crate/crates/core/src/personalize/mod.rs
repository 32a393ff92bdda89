//! Guidance-script personalization: the placeholder template, sensory
//! snippets, slot filling, profile extraction and generation jobs.

mod fill;
mod jobs;
mod lexicon;
mod profile;
mod template;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fill::{fill_template, FillOptions, GuidanceScript, SlotFill};
pub use jobs::{
    submit_job, AssetRef, GenerationClient, GenerationJob, JobGuard, JobInput, JobKind, JobResult,
    JobTracker, MockFailure, MockGenerationClient, PanoramaPreset,
};
pub use lexicon::{validate_snippet, Lexicon, Violation};
pub use profile::{
    extract_profile, extraction_request, ClientError, Element, FixtureClient, MarkerClient,
    SafePlaceProfile, StaticClient, TextClient, TextRequest,
};
pub use template::{parse_template, GuidanceTemplate, Placeholder, PlaceholderKind, Segment};

/// The guidance template shipped with the engine.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../fixtures/guidance_template.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Tactile,
    Auditory,
    Olfactory,
    Memory,
    Activity,
}

impl Modality {
    pub const SENSORY: [Modality; 4] = [
        Modality::Visual,
        Modality::Tactile,
        Modality::Auditory,
        Modality::Olfactory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Tactile => "tactile",
            Modality::Auditory => "auditory",
            Modality::Olfactory => "olfactory",
            Modality::Memory => "memory",
            Modality::Activity => "activity",
        }
    }

    pub fn is_sensory(self) -> bool {
        Self::SENSORY.contains(&self)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = PersonalizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        [
            Modality::Visual,
            Modality::Tactile,
            Modality::Auditory,
            Modality::Olfactory,
            Modality::Memory,
            Modality::Activity,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or(PersonalizeError::UnknownModality(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: String,
    pub text: String,
    pub modality: Modality,
    /// Starts with a phrase linking back to the visitor's own words.
    #[serde(default)]
    pub links_back: bool,
}

impl Snippet {
    /// Builds a snippet, deriving `links_back` from the lexicon's prefixes.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        modality: Modality,
        lex: &Lexicon,
    ) -> Self {
        let text = text.into();
        let links_back = lex.links_back(&text);
        Self {
            id: id.into(),
            text,
            modality,
            links_back,
        }
    }
}

#[derive(Debug, Error)]
pub enum PersonalizeError {
    #[error("template is empty")]
    EmptyTemplate,
    #[error("unbalanced brace at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("unknown placeholder {text:?} at byte {offset}")]
    UnknownPlaceholder { offset: usize, text: String },
    #[error("no snippet available for the {0} placeholder")]
    UnfilledModality(Modality),
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
    #[error("invalid snippet {id:?}: {reason}")]
    InvalidSnippet { id: String, reason: String },
    #[error("profile has no place name")]
    EmptyPlaceName,
    #[error("profile contains details not found in the transcript: {0:?}")]
    Grounding(Vec<String>),
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("text client: {0}")]
    TextClient(#[from] ClientError),
    #[error("client returned malformed output: {0}")]
    ClientOutput(String),
    #[error("{kind:?} job failed{}: {message}", if *.retriable { " (retriable)" } else { "" })]
    Job {
        kind: JobKind,
        retriable: bool,
        message: String,
        job: Box<GenerationJob>,
    },
    #[error("a {kind:?} job is already running for session {session}")]
    JobInFlight { session: String, kind: JobKind },
    #[error("job parameters do not match the {0:?} preset")]
    PresetMismatch(JobKind),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
