use std::cmp::Ordering;

use super::decoder::decode_teacher_forced;
use super::encoder::EncodedFeatures;
use super::layers::Dropout;
use super::ModelConfig;
use crate::bpe::{BOS, EOS, PAD};
use crate::params::ParamStore;
use crate::tensor::Tape;
use crate::{Error, Result};

/// Next-token log-probabilities given a prefix that starts with BOS.
pub trait StepScorer {
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    /// Finished hypotheses are ranked by `score / len^length_penalty`.
    pub length_penalty: f64,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(beam_size: usize, max_len: usize) -> Self {
        Self {
            beam_size,
            max_len,
            length_penalty: 0.0,
            banned: vec![PAD, BOS],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    /// Generated ids after BOS, ending with EOS unless `max_len` was hit.
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Sum of `log_probs`.
    pub score: f64,
}

impl GenerationResult {
    fn ranked(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.score
        } else {
            self.score / (self.tokens.len() as f64).powf(length_penalty)
        }
    }

    /// Tokens with the trailing EOS removed.
    pub fn text_ids(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn validate(cfg: &BeamConfig) -> Result<()> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if cfg.max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    Ok(())
}

/// Beam search over summed log-probabilities.
///
/// Each step expands every live beam by every allowed token and keeps the
/// `beam_size` best candidates; a candidate ending in EOS, or reaching
/// `max_len`, is set aside as finished. Equal scores are ordered by token
/// id, then by the rank of the parent beam.
pub fn beam_search(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<GenerationResult> {
    validate(cfg)?;
    let mut alive = vec![GenerationResult {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<GenerationResult> = Vec::new();
    let mut prefix = Vec::with_capacity(cfg.max_len + 1);
    for step in 0..cfg.max_len {
        let mut candidates: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (b, beam) in alive.iter().enumerate() {
            prefix.clear();
            prefix.push(BOS);
            prefix.extend_from_slice(&beam.tokens);
            let lp = scorer.next_log_probs(&prefix)?;
            for (tok, &l) in lp.iter().enumerate() {
                if !cfg.banned.contains(&tok) && l > f64::NEG_INFINITY {
                    candidates.push((beam.score + l, tok, b, l));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(candidates.len());
        for (score, tok, b, l) in candidates {
            let mut beam = alive[b].clone();
            beam.tokens.push(tok);
            beam.log_probs.push(l);
            beam.score = score;
            if tok == EOS || step + 1 == cfg.max_len {
                finished.push(beam);
            } else {
                next.push(beam);
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    let mut best: Option<GenerationResult> = None;
    for f in finished {
        if best
            .as_ref()
            .is_none_or(|b| f.ranked(cfg.length_penalty) > b.ranked(cfg.length_penalty))
        {
            best = Some(f);
        }
    }
    best.ok_or_else(|| Error::InvalidInput("every token is banned".into()))
}

/// Repeatedly takes the most probable allowed token (lowest id on ties).
pub fn greedy_decode(scorer: &dyn StepScorer, max_len: usize, banned: &[usize]) -> Result<GenerationResult> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut out = GenerationResult {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        score: 0.0,
    };
    let mut prefix = vec![BOS];
    while out.tokens.len() < max_len {
        let lp = scorer.next_log_probs(&prefix)?;
        let mut pick: Option<(usize, f64)> = None;
        for (tok, &l) in lp.iter().enumerate() {
            if !banned.contains(&tok) && pick.is_none_or(|(_, b)| l > b) {
                pick = Some((tok, l));
            }
        }
        let (tok, l) = pick.ok_or_else(|| Error::InvalidInput("every token is banned".into()))?;
        out.tokens.push(tok);
        out.log_probs.push(l);
        out.score += l;
        prefix.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(out)
}

/// Scores prefixes with the decoder attending to fixed encoder output.
pub struct TransformerScorer<'a> {
    pub store: &'a ParamStore,
    pub cfg: &'a ModelConfig,
    pub encoded: &'a EncodedFeatures,
}

impl StepScorer for TransformerScorer<'_> {
    fn next_log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, |_| false);
        let f_enc = tape.constant(self.encoded.tokens.clone());
        let out = decode_teacher_forced(&p, f_enc, &self.encoded.pad_mask, prefix, self.cfg, &Dropout::eval())?;
        let logits = tape.value(out.logits);
        let row = logits.row(prefix.len() - 1);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Ok(row.iter().map(|x| x - lse).collect())
    }
}
