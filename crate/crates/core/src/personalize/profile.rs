//! Safe-place profiles extracted from a session transcript by a text client.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Modality, PersonalizeError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafePlaceProfile {
    pub place_name: String,
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub senses: BTreeMap<Modality, Vec<String>>,
    #[serde(default)]
    pub memories: Vec<String>,
    #[serde(default)]
    pub desired_activities: Vec<String>,
}

fn fold(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl SafePlaceProfile {
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("profile serializes");
        let d = Sha256::digest(json.as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Strings that must be traceable to the transcript.
    fn grounded_strings(&self) -> impl Iterator<Item = &String> {
        self.senses
            .values()
            .flatten()
            .chain(&self.memories)
            .chain(self.elements.iter().map(|e| &e.name))
    }

    /// Checks the profile against the transcript it was extracted from.
    pub fn check(&self, transcript: &str) -> Result<(), PersonalizeError> {
        if self.place_name.trim().is_empty() {
            return Err(PersonalizeError::EmptyPlaceName);
        }
        let hay = fold(transcript);
        let missing: Vec<String> = self
            .grounded_strings()
            .filter(|s| !hay.contains(&fold(s)))
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(PersonalizeError::Grounding(missing))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRequest {
    pub task: String,
    pub instructions: String,
    pub input: String,
}

impl TextRequest {
    /// Stable key for canned responses.
    pub fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("request serializes");
        hex_digest(json.as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("no canned response for request {0}")]
    MissingFixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClientError {
    pub fn retriable(&self) -> bool {
        matches!(self, ClientError::Timeout | ClientError::Unavailable(_))
    }
}

/// Request/response seam to a text-generation service.
pub trait TextClient: Send + Sync {
    fn complete(&self, req: &TextRequest) -> Result<String, ClientError>;
}

/// Returns the same response for every request.
#[derive(Debug, Clone)]
pub struct StaticClient(pub String);

impl TextClient for StaticClient {
    fn complete(&self, _req: &TextRequest) -> Result<String, ClientError> {
        Ok(self.0.clone())
    }
}

/// Reads `<dir>/<request key>.json`.
#[derive(Debug, Clone)]
pub struct FixtureClient {
    pub dir: PathBuf,
}

impl TextClient for FixtureClient {
    fn complete(&self, req: &TextRequest) -> Result<String, ClientError> {
        let key = req.key();
        let path = self.dir.join(format!("{key}.json"));
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(ClientError::MissingFixture(key))
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Builds a profile from `[tag: value]` markers in the transcript.
///
/// Tags: `place`, `element` (`name; attr, attr`), `memory`, `activity` and
/// the four sensory modalities.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarkerClient;

impl MarkerClient {
    pub fn profile_of(transcript: &str) -> SafePlaceProfile {
        let mut p = SafePlaceProfile::default();
        let mut rest = transcript;
        while let Some(open) = rest.find('[') {
            let after = &rest[open + 1..];
            let Some(close) = after.find(']') else { break };
            let body = &after[..close];
            rest = &after[close + 1..];
            let Some((tag, value)) = body.split_once(':') else {
                continue;
            };
            let value = value.trim().to_string();
            match tag.trim().to_ascii_lowercase().as_str() {
                "place" => p.place_name = value,
                "memory" => p.memories.push(value),
                "activity" => p.desired_activities.push(value),
                "element" => {
                    let (name, attrs) = value.split_once(';').unwrap_or((&value, ""));
                    p.elements.push(Element {
                        name: name.trim().to_string(),
                        attributes: attrs
                            .split(',')
                            .map(str::trim)
                            .filter(|a| !a.is_empty())
                            .map(String::from)
                            .collect(),
                    });
                }
                other => {
                    if let Ok(m) = other.parse::<Modality>() {
                        if m.is_sensory() {
                            p.senses.entry(m).or_default().push(value);
                        }
                    }
                }
            }
        }
        p
    }
}

impl TextClient for MarkerClient {
    fn complete(&self, req: &TextRequest) -> Result<String, ClientError> {
        Ok(serde_json::to_string(&Self::profile_of(&req.input)).expect("profile serializes"))
    }
}

pub const EXTRACT_TASK: &str = "extract_profile";

const EXTRACT_INSTRUCTIONS: &str = "Read the visitor/therapist dialogue. Return JSON with \
place_name, elements [{name, attributes}], senses {visual|tactile|auditory|olfactory: [..]}, \
memories and desired_activities. Quote the visitor's own words; add nothing they did not say.";

pub fn extraction_request(transcript: &str) -> TextRequest {
    TextRequest {
        task: EXTRACT_TASK.into(),
        instructions: EXTRACT_INSTRUCTIONS.into(),
        input: transcript.into(),
    }
}

pub fn extract_profile(
    transcript: &str,
    client: &dyn TextClient,
) -> Result<SafePlaceProfile, PersonalizeError> {
    if transcript.trim().is_empty() {
        return Err(PersonalizeError::EmptyTranscript);
    }
    let raw = client.complete(&extraction_request(transcript))?;
    let profile: SafePlaceProfile = serde_json::from_str(raw.trim())
        .map_err(|e| PersonalizeError::ClientOutput(e.to_string()))?;
    profile.check(transcript)?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRANSCRIPT: &str = "Therapist: What did you draw?\n\
Visitor: A small garden I call [place: Quiet Grove]. There is a [element: bamboo grove; tall, green] \
behind a [element: wooden fence; weathered].\n\
Visitor: The [visual: golden light] in the evening, and the [olfactory: osmanthus scent].\n\
Visitor: I remember [memory: reading there with my grandmother] and I want to [activity: sit and listen].";

    #[test]
    fn marker_client_echoes_tags() {
        let p = extract_profile(TRANSCRIPT, &MarkerClient).unwrap();
        assert_eq!(p.place_name, "Quiet Grove");
        let names: Vec<&str> = p.elements.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["bamboo grove", "wooden fence"]);
        assert_eq!(p.elements[0].attributes, ["tall", "green"]);
        assert_eq!(p.senses[&Modality::Visual], ["golden light"]);
        assert_eq!(p.memories, ["reading there with my grandmother"]);
        assert_eq!(p.desired_activities, ["sit and listen"]);
    }

    #[test]
    fn invented_detail_is_rejected() {
        let mut p = MarkerClient::profile_of(TRANSCRIPT);
        p.senses
            .entry(Modality::Olfactory)
            .or_default()
            .push("smell of coffee".into());
        let client = StaticClient(serde_json::to_string(&p).unwrap());
        match extract_profile(TRANSCRIPT, &client) {
            Err(PersonalizeError::Grounding(bad)) => assert_eq!(bad, ["smell of coffee"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grounding_is_case_and_space_insensitive() {
        let mut p = MarkerClient::profile_of(TRANSCRIPT);
        p.senses
            .insert(Modality::Visual, vec!["Golden   Light".into()]);
        assert!(p.check(TRANSCRIPT).is_ok());
    }

    #[test]
    fn empty_place_name() {
        let client = StaticClient(r#"{"place_name": " "}"#.into());
        assert!(matches!(
            extract_profile("hello", &client),
            Err(PersonalizeError::EmptyPlaceName)
        ));
    }

    #[test]
    fn unstructured_output_rejected() {
        let client = StaticClient(r#"{"place_name": "x", "summary": "free text"}"#.into());
        assert!(matches!(
            extract_profile("x", &client),
            Err(PersonalizeError::ClientOutput(_))
        ));
        assert!(matches!(
            extract_profile("  ", &client),
            Err(PersonalizeError::EmptyTranscript)
        ));
    }

    #[test]
    fn fixture_client_keys_by_request() {
        let dir = tempfile::tempdir().unwrap();
        let req = extraction_request(TRANSCRIPT);
        let canned = serde_json::to_string(&MarkerClient::profile_of(TRANSCRIPT)).unwrap();
        std::fs::write(dir.path().join(format!("{}.json", req.key())), &canned).unwrap();
        let client = FixtureClient {
            dir: dir.path().into(),
        };
        let p = extract_profile(TRANSCRIPT, &client).unwrap();
        assert_eq!(p.place_name, "Quiet Grove");
        let miss = client.complete(&extraction_request("other")).unwrap_err();
        assert!(matches!(miss, ClientError::MissingFixture(_)));
        assert!(!miss.retriable());
    }
}
