//! The closed placeholder grammar of guidance templates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Modality, PersonalizeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "modality")]
pub enum PlaceholderKind {
    /// The name the visitor gave their safe place.
    Name,
    /// A snippet of one sensory modality.
    Snippet(Modality),
    /// Any remaining snippet, or nothing.
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placeholder {
    pub kind: PlaceholderKind,
    /// Text between the braces, kept verbatim for round-tripping.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Literal(String),
    Placeholder(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceTemplate {
    pub segments: Vec<Segment>,
}

fn classify(inner: &str) -> Option<PlaceholderKind> {
    let t = inner.trim();
    let t = t.strip_suffix('.').unwrap_or(t).trim_end();
    let lower = t.to_ascii_lowercase();
    if lower == "the name of the safe island" {
        return Some(PlaceholderKind::Name);
    }
    if lower == "choose another snippet" {
        return Some(PlaceholderKind::Any);
    }
    let m = lower
        .strip_prefix("meditation snippet related to ")?
        .strip_suffix(" details")?;
    let modality = m.parse::<Modality>().ok()?;
    modality
        .is_sensory()
        .then_some(PlaceholderKind::Snippet(modality))
}

pub fn parse_template(text: &str) -> Result<GuidanceTemplate, PersonalizeError> {
    if text.is_empty() {
        return Err(PersonalizeError::EmptyTemplate);
    }
    let mut segments = Vec::new();
    let mut literal_start = 0;
    let mut open: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c, open) {
            ('{', None) => {
                if i > literal_start {
                    segments.push(Segment::Literal(text[literal_start..i].to_string()));
                }
                open = Some(i);
            }
            ('{', Some(_)) | ('}', None) => return Err(PersonalizeError::Unbalanced { offset: i }),
            ('}', Some(start)) => {
                let raw = &text[start + 1..i];
                let kind = classify(raw).ok_or_else(|| PersonalizeError::UnknownPlaceholder {
                    offset: start,
                    text: raw.to_string(),
                })?;
                segments.push(Segment::Placeholder(Placeholder {
                    kind,
                    raw: raw.to_string(),
                }));
                open = None;
                literal_start = i + 1;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        return Err(PersonalizeError::Unbalanced { offset: start });
    }
    if literal_start < text.len() {
        segments.push(Segment::Literal(text[literal_start..].to_string()));
    }
    Ok(GuidanceTemplate { segments })
}

impl GuidanceTemplate {
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(t) => s.push_str(t),
                Segment::Placeholder(p) => {
                    s.push('{');
                    s.push_str(&p.raw);
                    s.push('}');
                }
            }
        }
        s
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &Placeholder> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p),
            Segment::Literal(_) => None,
        })
    }

    pub fn count(&self, kind: PlaceholderKind) -> usize {
        self.placeholders().filter(|p| p.kind == kind).count()
    }

    /// Short content hash identifying the template.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::personalize::DEFAULT_TEMPLATE;

    #[test]
    fn bundled_template_slots() {
        let t = parse_template(DEFAULT_TEMPLATE).unwrap();
        assert_eq!(t.count(PlaceholderKind::Name), 2);
        for m in Modality::SENSORY {
            assert_eq!(t.count(PlaceholderKind::Snippet(m)), 1, "{m}");
        }
        assert_eq!(t.count(PlaceholderKind::Any), 4);
        assert_eq!(t.serialize(), DEFAULT_TEMPLATE);
    }

    #[test]
    fn plain_text_is_one_literal() {
        let t = parse_template("Breathe in. Breathe out.").unwrap();
        assert_eq!(
            t.segments,
            vec![Segment::Literal("Breathe in. Breathe out.".into())]
        );
    }

    #[test]
    fn unknown_placeholder() {
        match parse_template("Hello {unknown thing} there") {
            Err(PersonalizeError::UnknownPlaceholder { offset, text }) => {
                assert_eq!(offset, 6);
                assert_eq!(text, "unknown thing");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_template("{Meditation snippet related to memory details.}").is_err());
    }

    #[test]
    fn unbalanced_braces() {
        assert!(matches!(
            parse_template("a { b"),
            Err(PersonalizeError::Unbalanced { offset: 2 })
        ));
        assert!(matches!(
            parse_template("a } b"),
            Err(PersonalizeError::Unbalanced { offset: 2 })
        ));
        assert!(matches!(
            parse_template("{a {b}}"),
            Err(PersonalizeError::Unbalanced { offset: 3 })
        ));
        assert!(matches!(
            parse_template(""),
            Err(PersonalizeError::EmptyTemplate)
        ));
    }

    #[test]
    fn adjacent_placeholders() {
        let t = parse_template("{Choose another snippet.}{choose another snippet}").unwrap();
        assert_eq!(t.segments.len(), 2);
        assert_eq!(
            t.serialize(),
            "{Choose another snippet.}{choose another snippet}"
        );
    }
}
