//! Sense-word lexicon and the snippet rules checked against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PersonalizeError, Snippet};

const BUILTIN: &str = include_str!("../../assets/lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    /// Category name to sense words or phrases (lowercase).
    pub categories: BTreeMap<String, Vec<String>>,
    pub linking_prefixes: Vec<String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_json(BUILTIN).expect("bundled lexicon parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Violation {
    EmptyText,
    /// Braces would be mistaken for template placeholders.
    Braces,
    /// More than one sense category in one sentence.
    MultiSensory {
        sentence: usize,
        categories: Vec<String>,
    },
    MissingLink,
}

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Splits on sentence-final punctuation followed by whitespace or the end.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?' | '…') {
            let next = chars.get(k + 1).map(|&(_, n)| n);
            if next.is_none_or(char::is_whitespace) {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, PersonalizeError> {
        let mut lex: Lexicon = serde_json::from_str(text)?;
        for words in lex.categories.values_mut() {
            for w in words.iter_mut() {
                *w = tokens(w).join(" ");
            }
            words.retain(|w| !w.is_empty());
        }
        if lex.categories.is_empty() {
            return Err(PersonalizeError::Lexicon("no categories".into()));
        }
        Ok(lex)
    }

    pub fn links_back(&self, text: &str) -> bool {
        let t = text.trim_start().to_lowercase();
        self.linking_prefixes
            .iter()
            .any(|p| t.starts_with(&p.to_lowercase()))
    }

    /// Sense categories mentioned in one sentence.
    pub fn categories_in(&self, sentence: &str) -> Vec<String> {
        let toks = tokens(sentence);
        let joined = format!(" {} ", toks.join(" "));
        self.categories
            .iter()
            .filter(|(_, words)| {
                words.iter().any(|w| {
                    if w.contains(' ') {
                        joined.contains(&format!(" {w} "))
                    } else {
                        toks.iter().any(|t| t == w)
                    }
                })
            })
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn validate(&self, s: &Snippet) -> Vec<Violation> {
        let mut v = Vec::new();
        if s.text.trim().is_empty() {
            v.push(Violation::EmptyText);
            return v;
        }
        if s.text.contains(['{', '}']) {
            v.push(Violation::Braces);
        }
        for (i, sentence) in sentences(&s.text).into_iter().enumerate() {
            let cats = self.categories_in(sentence);
            if cats.len() > 1 {
                v.push(Violation::MultiSensory {
                    sentence: i,
                    categories: cats,
                });
            }
        }
        if !self.links_back(&s.text) {
            v.push(Violation::MissingLink);
        }
        v
    }
}

/// Checks a snippet against the bundled lexicon.
pub fn validate_snippet(s: &Snippet) -> Vec<Violation> {
    Lexicon::default().validate(s)
}
