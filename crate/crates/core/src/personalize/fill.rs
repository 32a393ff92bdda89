//! Slot filling with the fill-or-remove rule.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::template::{GuidanceTemplate, PlaceholderKind, Segment};
use super::{PersonalizeError, Snippet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillOptions {
    /// Soft bounds on the number of snippets supplied; outside them the
    /// script carries a note but is still produced.
    pub min_snippets: usize,
    pub max_snippets: usize,
}

impl Default for FillOptions {
    fn default() -> Self {
        Self {
            min_snippets: 6,
            max_snippets: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotFill {
    Snippet(String),
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceScript {
    pub id: String,
    pub text: String,
    /// Placeholder index (over all placeholders, in order) to its fill.
    /// Name slots are not listed.
    pub fills: BTreeMap<usize, SlotFill>,
    pub template_id: String,
    #[serde(default)]
    pub profile_id: Option<String>,
    /// Set once a therapist has reviewed the script. Sessions refuse
    /// unapproved scripts.
    #[serde(default)]
    pub approved: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl GuidanceScript {
    pub fn approve(&mut self) {
        self.approved = true;
    }

    pub fn has_placeholders(&self) -> bool {
        self.text.contains(['{', '}'])
    }
}

const REMOVED: char = '\u{0}';

pub fn fill_template(
    t: &GuidanceTemplate,
    name: &str,
    snippets: &[Snippet],
    opts: &FillOptions,
) -> Result<GuidanceScript, PersonalizeError> {
    let name = name.trim();
    if name.is_empty() {
        return Err(PersonalizeError::EmptyPlaceName);
    }
    let mut seen = HashSet::new();
    for s in snippets {
        if !seen.insert(s.id.as_str()) {
            return Err(PersonalizeError::InvalidSnippet {
                id: s.id.clone(),
                reason: "duplicate id".into(),
            });
        }
        if s.text.trim().is_empty() || s.text.contains(['{', '}']) || s.text.contains(REMOVED) {
            return Err(PersonalizeError::InvalidSnippet {
                id: s.id.clone(),
                reason: "empty or contains braces".into(),
            });
        }
    }

    let kinds: Vec<PlaceholderKind> = t.placeholders().map(|p| p.kind).collect();
    let mut used = vec![false; snippets.len()];
    let mut assigned: Vec<Option<usize>> = vec![None; kinds.len()];

    // Modality slots take priority so an any-kind slot earlier in the text
    // cannot starve them.
    for (slot, kind) in kinds.iter().enumerate() {
        if let PlaceholderKind::Snippet(m) = kind {
            let pick = (0..snippets.len())
                .find(|&i| !used[i] && snippets[i].modality == *m)
                .ok_or(PersonalizeError::UnfilledModality(*m))?;
            used[pick] = true;
            assigned[slot] = Some(pick);
        }
    }
    for (slot, kind) in kinds.iter().enumerate() {
        if *kind == PlaceholderKind::Any {
            if let Some(pick) = (0..snippets.len()).find(|&i| !used[i]) {
                used[pick] = true;
                assigned[slot] = Some(pick);
            }
        }
    }

    let mut raw = String::new();
    let mut fills = BTreeMap::new();
    let mut slot = 0;
    for seg in &t.segments {
        match seg {
            Segment::Literal(s) => raw.push_str(s),
            Segment::Placeholder(p) => {
                match p.kind {
                    PlaceholderKind::Name => raw.push_str(name),
                    _ => match assigned[slot] {
                        Some(i) => {
                            raw.push_str(snippets[i].text.trim());
                            fills.insert(slot, SlotFill::Snippet(snippets[i].id.clone()));
                        }
                        None => {
                            raw.push(REMOVED);
                            fills.insert(slot, SlotFill::Removed);
                        }
                    },
                }
                slot += 1;
            }
        }
    }
    let text = remove_slots(&raw);

    let mut notes = Vec::new();
    if snippets.len() < opts.min_snippets || snippets.len() > opts.max_snippets {
        notes.push(format!(
            "{} snippets supplied, expected {}-{}",
            snippets.len(),
            opts.min_snippets,
            opts.max_snippets
        ));
    }
    let unused: Vec<&str> = snippets
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(s, _)| s.id.as_str())
        .collect();
    if !unused.is_empty() {
        notes.push(format!("unused snippets: {}", unused.join(", ")));
    }

    let digest = Sha256::digest(text.as_bytes());
    Ok(GuidanceScript {
        id: digest[..8].iter().map(|b| format!("{b:02x}")).collect(),
        text,
        fills,
        template_id: t.id(),
        profile_id: None,
        approved: false,
        notes,
    })
}

/// Drops removed slots. A slot alone on its line takes the line and one
/// neighbouring blank line with it; an inline slot takes one adjacent space.
fn remove_slots(raw: &str) -> String {
    let lines: Vec<&str> = raw.split('\n').collect();
    let mut out: Vec<String> = Vec::with_capacity(lines.len());
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let only_removed =
            line.contains(REMOVED) && line.chars().all(|c| c == REMOVED || c.is_whitespace());
        if only_removed {
            let prev_blank = out.last().is_some_and(|l| l.trim().is_empty());
            let next_blank = lines.get(i + 1).is_some_and(|l| l.trim().is_empty());
            if next_blank && (prev_blank || out.is_empty()) {
                i += 1;
            } else if prev_blank && !next_blank {
                out.pop();
            }
            i += 1;
            continue;
        }
        let cleaned = line.replace(&format!(" {REMOVED} "), " ");
        let cleaned = match cleaned.strip_prefix(&format!("{REMOVED} ")) {
            Some(rest) => rest.to_string(),
            None => cleaned,
        };
        let cleaned = cleaned
            .replace(&format!(" {REMOVED}"), "")
            .replace(REMOVED, "");
        out.push(cleaned);
        i += 1;
    }
    out.join("\n")
}
