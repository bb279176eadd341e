//! Byte-pair-encoding subword tokenizer.
//!
//! Words are split on whitespace and spelled as characters, with the
//! end-of-word marker `</w>` glued to the final character. Training merges
//! the most frequent adjacent pair until the vocabulary reaches its target
//! size or no pair occurs more than once.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::TensorError;
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const END_OF_WORD: &str = "</w>";
pub const DEFAULT_VOCAB_SIZE: usize = 4000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct BpeFile {
    merges: Vec<[String; 2]>,
    vocab: BTreeMap<String, usize>,
}

fn spell(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
    if let Some(last) = out.last_mut() {
        last.push_str(END_OF_WORD);
    }
    out
}

/// Number of base symbols a corpus yields: each distinct character in both
/// its word-internal and word-final spelling.
pub fn base_symbol_count<S: AsRef<str>>(corpus: &[S]) -> usize {
    base_symbols(corpus).len()
}

fn base_symbols<S: AsRef<str>>(corpus: &[S]) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for line in corpus {
        for c in line.as_ref().chars().filter(|c| !c.is_whitespace()) {
            set.insert(c.to_string());
            set.insert(format!("{c}{END_OF_WORD}"));
        }
    }
    set
}

fn merge_word(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    /// Learns merges from whitespace-tokenized sentences.
    pub fn train<S: AsRef<str>>(corpus: &[S], target_vocab_size: usize) -> Result<Self> {
        let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
        for line in corpus {
            for w in line.as_ref().split_whitespace() {
                *word_freq.entry(w).or_default() += 1;
            }
        }
        if word_freq.is_empty() {
            return Err(Error::InvalidInput("cannot train BPE on an empty corpus".into()));
        }
        let base = base_symbols(corpus);
        let floor = base.len() + SPECIALS.len();
        if target_vocab_size < floor {
            return Err(Error::Config(format!(
                "target vocabulary {target_vocab_size} is below the {floor} base symbols and specials"
            )));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(base);
        let mut known: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut words: Vec<(Vec<String>, usize)> =
            word_freq.into_iter().map(|(w, f)| (spell(w), f)).collect();
        let mut merges = Vec::new();

        while tokens.len() < target_vocab_size {
            let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (symbols, freq) in &words {
                for pair in symbols.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_default() += freq;
                }
            }
            // BTreeMap iteration is ascending, so the first maximum is the
            // lexicographically smallest pair.
            let mut best: Option<((&str, &str), usize)> = None;
            for (&pair, &c) in &counts {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((pair, c));
                }
            }
            let Some(((a, b), count)) = best else { break };
            if count < 2 {
                break;
            }
            let (a, b) = (a.to_string(), b.to_string());
            for (symbols, _) in words.iter_mut() {
                *symbols = merge_word(symbols, &a, &b);
            }
            let joined = format!("{a}{b}");
            if known.insert(joined.clone()) {
                tokens.push(joined);
            }
            merges.push((a, b));
        }
        Ok(Self::assemble(merges, tokens))
    }

    fn assemble(merges: Vec<(String, String)>, tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Self {
            merges,
            tokens,
            ids,
            ranks,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Subword symbols of one word after applying the merges in rank order.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = spell(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min();
            let Some(&rank) = best else { break };
            let (a, b) = &self.merges[rank];
            symbols = merge_word(&symbols, a, b);
        }
        symbols
    }

    pub fn encode(&self, text: &str, add_specials: bool) -> Vec<usize> {
        let mut out = Vec::new();
        if add_specials {
            out.push(BOS);
        }
        for word in text.split_whitespace() {
            out.extend(
                self.segment(word)
                    .iter()
                    .map(|s| self.id(s).unwrap_or(UNK)),
            );
        }
        if add_specials {
            out.push(EOS);
        }
        out
    }

    /// Joins subwords, turning each `</w>` into a word break. PAD, BOS and
    /// EOS are dropped; UNK renders as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(TensorError::IndexOutOfRange {
                index: id,
                bound: self.vocab_size(),
            })?;
            match id {
                PAD | BOS | EOS => {}
                UNK => text.push_str(token),
                _ => match token.strip_suffix(END_OF_WORD) {
                    Some(stem) => {
                        text.push_str(stem);
                        text.push(' ');
                    }
                    None => text.push_str(token),
                },
            }
        }
        Ok(text.trim_end().to_string())
    }

    pub fn to_json(&self) -> String {
        let file = BpeFile {
            merges: self.merges.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
            vocab: self.ids.iter().map(|(t, &i)| (t.clone(), i)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("bpe model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BpeFile = serde_json::from_str(text)?;
        let n = file.vocab.len();
        let mut tokens = vec![None; n];
        for (tok, id) in file.vocab {
            let slot = tokens
                .get_mut(id)
                .ok_or_else(|| Error::InvalidInput(format!("token id {id} out of range {n}")))?;
            if slot.replace(tok).is_some() {
                return Err(Error::InvalidInput(format!("duplicate token id {id}")));
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("ids are dense")).collect();
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::InvalidInput(format!("special token {s} must have id {i}")));
            }
        }
        let merges = file.merges.into_iter().map(|[a, b]| (a, b)).collect();
        Ok(Self::assemble(merges, tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
