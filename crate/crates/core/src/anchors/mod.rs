//! Conceptual anchor mining.
//!
//! Anchor words are verbs and nouns (or another tag family) drawn from the
//! training translations, kept when they are neither rare nor present in
//! almost every sample. Each anchor later gets a learnable global embedding,
//! initialized from pretrained word vectors when available.

mod embeddings;
mod tagger;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use embeddings::{load_pretrained_embeddings, read_pretrained_embeddings, EmbeddingInit};
pub use tagger::{pos_tag, Lexicon};
pub use tokenize::{split_tokens, tokenize};

use crate::{Error, Result};

pub const DEFAULT_MIN_COUNT: usize = 10;
pub const DEFAULT_MAX_DOC_FRACTION: f64 = 0.9;

/// One tokenized, tagged translation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub sample_id: usize,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>, sample_id: usize) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::InvalidInput(format!(
                "sample {sample_id}: {} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        Ok(Self {
            tokens,
            tags,
            sample_id,
        })
    }

    /// Tokenizes and tags raw text with the lexicon tagger. Tokens are
    /// lowercased after tagging.
    pub fn from_text(text: &str, lexicon: &Lexicon, sample_id: usize) -> Self {
        let raw = split_tokens(text);
        let tags = pos_tag(&raw, lexicon);
        Self {
            tokens: raw.into_iter().map(|t| t.to_lowercase()).collect(),
            tags,
            sample_id,
        }
    }
}

/// Word-type presets for anchor selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordType {
    V,
    N,
    VN,
    VNA,
}

const VERB_TAGS: [&str; 6] = ["VB", "VBD", "VBG", "VBN", "VBP", "VBZ"];
const NOUN_TAGS: [&str; 3] = ["NN", "NNP", "NNS"];
const MODIFIER_TAGS: [&str; 6] = ["JJ", "JJR", "JJS", "RB", "RBR", "RBS"];

impl WordType {
    pub const ALL: [WordType; 4] = [WordType::V, WordType::N, WordType::VN, WordType::VNA];

    pub fn tags(self) -> BTreeSet<String> {
        let mut set: Vec<&str> = Vec::new();
        if matches!(self, WordType::V | WordType::VN | WordType::VNA) {
            set.extend(VERB_TAGS);
        }
        if matches!(self, WordType::N | WordType::VN | WordType::VNA) {
            set.extend(NOUN_TAGS);
        }
        if self == WordType::VNA {
            set.extend(MODIFIER_TAGS);
        }
        set.into_iter().map(String::from).collect()
    }
}

impl fmt::Display for WordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WordType::V => "V",
            WordType::N => "N",
            WordType::VN => "VN",
            WordType::VNA => "VNA",
        };
        f.write_str(s)
    }
}

impl FromStr for WordType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "V" => Ok(WordType::V),
            "N" => Ok(WordType::N),
            "VN" => Ok(WordType::VN),
            "VNA" => Ok(WordType::VNA),
            other => Err(Error::Config(format!("unknown word type preset {other:?}"))),
        }
    }
}

/// Mined anchor words; the position of a word is its anchor id.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AnchorVocab {
    pub words: Vec<String>,
    pub counts: Vec<usize>,
    pub doc_counts: Vec<usize>,
    pub tagset_used: BTreeSet<String>,
    index: HashMap<String, usize>,
}

impl AnchorVocab {
    pub fn from_entries(
        entries: Vec<(String, usize, usize)>,
        tagset_used: BTreeSet<String>,
    ) -> Result<Self> {
        let mut vocab = Self {
            tagset_used,
            ..Self::default()
        };
        for (word, count, docs) in entries {
            if vocab.index.insert(word.clone(), vocab.words.len()).is_some() {
                return Err(Error::InvalidInput(format!("duplicate anchor word {word:?}")));
            }
            vocab.words.push(word);
            vocab.counts.push(count);
            vocab.doc_counts.push(docs);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// `word<TAB>count<TAB>doc_count` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.words[i], self.counts[i], self.doc_counts[i]
            ));
        }
        out
    }

    pub fn from_tsv(text: &str, context: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: &str| Error::Format {
                context: context.to_string(),
                line: i + 1,
                message: message.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected word<TAB>count<TAB>doc_count"));
            }
            let count = fields[1].parse().map_err(|_| bad("count is not an integer"))?;
            let docs = fields[2].parse().map_err(|_| bad("doc_count is not an integer"))?;
            entries.push((fields[0].to_string(), count, docs));
        }
        Self::from_entries(entries, BTreeSet::new())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }
}

/// Selection thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorFilter {
    pub tagset: BTreeSet<String>,
    /// Words must occur strictly more often than this.
    pub min_count: usize,
    /// Words present in at least this fraction of samples are dropped.
    pub max_doc_fraction: f64,
}

impl AnchorFilter {
    pub fn preset(word_type: WordType) -> Self {
        Self {
            tagset: word_type.tags(),
            min_count: DEFAULT_MIN_COUNT,
            max_doc_fraction: DEFAULT_MAX_DOC_FRACTION,
        }
    }
}

/// Keeps a word iff one of its occurrences carries a tag from the filter's
/// tagset, its total token count exceeds `min_count`, and it appears in
/// fewer than `max_doc_fraction` of the samples. Ordered by descending
/// count, ties alphabetical.
pub fn select_anchors(corpus: &[TaggedSentence], filter: &AnchorFilter) -> AnchorVocab {
    #[derive(Default)]
    struct Stats {
        count: usize,
        docs: BTreeSet<usize>,
        tagged: bool,
    }
    let mut stats: BTreeMap<&str, Stats> = BTreeMap::new();
    for (doc, sentence) in corpus.iter().enumerate() {
        for (tok, tag) in sentence.tokens.iter().zip(&sentence.tags) {
            let s = stats.entry(tok.as_str()).or_default();
            s.count += 1;
            s.docs.insert(doc);
            s.tagged |= filter.tagset.contains(tag);
        }
    }
    let doc_limit = filter.max_doc_fraction * corpus.len() as f64;
    let mut kept: Vec<(String, usize, usize)> = stats
        .into_iter()
        .filter(|(_, s)| s.tagged && s.count > filter.min_count && (s.docs.len() as f64) < doc_limit)
        .map(|(w, s)| (w.to_string(), s.count, s.docs.len()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    AnchorVocab::from_entries(kept, filter.tagset.clone()).expect("words are unique")
}

/// One sentence per line, tagged with the lexicon tagger.
pub fn read_plain_corpus(text: &str, lexicon: &Lexicon) -> Vec<TaggedSentence> {
    text.lines()
        .enumerate()
        .map(|(i, line)| TaggedSentence::from_text(line, lexicon, i))
        .collect()
}

/// Pre-tagged corpus: `token<TAB>tag` lines, sentences separated by a blank
/// line. Tokens are lowercased.
pub fn read_tagged_corpus(text: &str, context: &str) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                let id = out.len();
                out.push(TaggedSentence::new(std::mem::take(&mut tokens), std::mem::take(&mut tags), id)?);
            }
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => {
                tokens.push(tok.to_lowercase());
                tags.push(tag.trim().to_string());
            }
            _ => {
                return Err(Error::Format {
                    context: context.to_string(),
                    line: i + 1,
                    message: "expected token<TAB>tag".into(),
                })
            }
        }
    }
    if !tokens.is_empty() {
        let id = out.len();
        out.push(TaggedSentence::new(tokens, tags, id)?);
    }
    Ok(out)
}
