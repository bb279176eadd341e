use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

static BUILTIN_LEXICON: &str = include_str!("../../resources/lexicon.tsv");

/// Word → most frequent Penn tag.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    tags: HashMap<String, String>,
}

impl Lexicon {
    /// The small English lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON, "builtin lexicon").expect("builtin lexicon parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `word<TAB>tag` lines; `#` starts a comment line.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut tags = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(w), Some(t), None) if !w.is_empty() && !t.is_empty() => {
                    tags.insert(w.to_lowercase(), t.to_string());
                }
                _ => {
                    return Err(Error::Format {
                        context: context.to_string(),
                        line: i + 1,
                        message: "expected word<TAB>tag".into(),
                    })
                }
            }
        }
        Ok(Self { tags })
    }

    pub fn insert(&mut self, word: &str, tag: &str) {
        self.tags.insert(word.to_lowercase(), tag.to_string());
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.tags.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Words carrying exactly `tag`, sorted.
    pub fn words_with_tag(&self, tag: &str) -> Vec<&str> {
        let mut w: Vec<&str> = self
            .tags
            .iter()
            .filter(|(_, t)| t.as_str() == tag)
            .map(|(w, _)| w.as_str())
            .collect();
        w.sort_unstable();
        w
    }
}

fn is_noun_tag(tag: &str) -> bool {
    matches!(tag, "NN" | "NNS" | "NNP" | "NNPS")
}

/// Tags one sentence of source-cased tokens.
///
/// Lexicon hits win. Misses fall through: capitalized word not at sentence
/// start → NNP, `-ing` → VBG, `-ed` → VBD, `-s` on a known noun stem → NNS,
/// digits → CD, punctuation tags as itself, and NN otherwise.
pub fn pos_tag<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| tag_one(tok.as_ref(), i == 0, lexicon))
        .collect()
}

fn tag_one(token: &str, sentence_start: bool, lexicon: &Lexicon) -> String {
    if let Some(tag) = lexicon.get(token) {
        return tag.to_string();
    }
    let first = token.chars().next();
    if first.is_none_or(|c| !c.is_alphanumeric()) {
        return token.to_string();
    }
    if token.chars().all(|c| c.is_ascii_digit()) {
        return "CD".into();
    }
    if !sentence_start && first.is_some_and(char::is_uppercase) {
        return "NNP".into();
    }
    let lower = token.to_lowercase();
    let long_enough = |suffix: &str| lower.len() > suffix.len() + 1 && lower.ends_with(suffix);
    if long_enough("ing") {
        return "VBG".into();
    }
    if long_enough("ed") {
        return "VBD".into();
    }
    if let Some(stem) = lower.strip_suffix('s') {
        if lexicon.get(stem).is_some_and(is_noun_tag) {
            return "NNS".into();
        }
    }
    "NN".into()
}
