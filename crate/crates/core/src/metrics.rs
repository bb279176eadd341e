//! Corpus BLEU-1..4 and ROUGE-L F1.
//!
//! Both metrics lowercase and split on whitespace before scoring, and take a
//! single reference per hypothesis.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub sentences: usize,
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn check_corpus<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty corpus".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::InvalidInput(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram statistics pooled over the corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped matches per order, index 0 = unigrams.
    pub matches: Vec<usize>,
    /// Hypothesis n-grams per order.
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn collect<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T], max_n: usize) -> Result<Self> {
        check_corpus(hyps, refs)?;
        let mut stats = Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            ..Self::default()
        };
        for (h, r) in hyps.iter().zip(refs) {
            let (h, r) = (words(h.as_ref()), words(r.as_ref()));
            stats.hyp_len += h.len();
            stats.ref_len += r.len();
            for n in 1..=max_n {
                let ref_counts = ngram_counts(&r, n);
                for (g, c) in ngram_counts(&h, n) {
                    stats.matches[n - 1] += c.min(ref_counts.get(g).copied().unwrap_or(0));
                    stats.totals[n - 1] += c;
                }
            }
        }
        Ok(stats)
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    /// BLEU up to order `n`: brevity penalty times the geometric mean of the
    /// first `n` precisions. Zero if any of those precisions is zero.
    pub fn bleu(&self, n: usize) -> f64 {
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        self.brevity_penalty() * (log_sum / n as f64).exp()
    }
}

/// BLEU-1 through BLEU-`max_n`.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T], max_n: usize) -> Result<Vec<f64>> {
    if max_n == 0 {
        return Err(Error::InvalidInput("max_n must be at least 1".into()));
    }
    let stats = BleuStats::collect(hyps, refs, max_n)?;
    Ok((1..=max_n).map(|n| stats.bleu(n)).collect())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_pair(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (words(hyp), words(reference));
    let lcs = lcs_len(&h, &r) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / h.len() as f64;
    let rec = lcs / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Mean per-pair ROUGE-L F1.
pub fn rouge_l_f1<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| rouge_l_pair(h.as_ref(), r.as_ref()))
        .sum();
    Ok(total / hyps.len() as f64)
}

pub fn evaluate<S: AsRef<str>, T: AsRef<str>>(hyps: &[S], refs: &[T]) -> Result<EvalReport> {
    let b = bleu(hyps, refs, 4)?;
    Ok(EvalReport {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        rouge_l: rouge_l_f1(hyps, refs)?,
        sentences: hyps.len(),
    })
}
