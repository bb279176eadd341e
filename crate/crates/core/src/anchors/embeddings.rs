use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;

use super::AnchorVocab;
use crate::tensor::Array;
use crate::{Error, Result};

const OOV_RANGE: f64 = 0.1;

/// Initial anchor embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingInit {
    /// `|words| × d_ca`
    pub matrix: Array,
    pub d_ca: usize,
    /// True for words absent from the pretrained file.
    pub oov_mask: Vec<bool>,
}

/// Reads whitespace-separated `word v1 … vd` vectors for the vocabulary
/// words. Rows of words missing from the file are drawn uniformly from
/// [−0.1, 0.1]. The width comes from the file; `fallback_dim` is used only
/// when the file holds no vectors at all.
pub fn read_pretrained_embeddings<R: BufRead, G: Rng + ?Sized>(
    reader: R,
    context: &str,
    vocab: &AnchorVocab,
    fallback_dim: usize,
    rng: &mut G,
) -> Result<EmbeddingInit> {
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut width: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        let bad = |message: String| Error::Format {
            context: context.to_string(),
            line: i + 1,
            message,
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(bad(format!("vector width {} differs from {}", values.len(), w)))
            }
            _ => {}
        }
        if let Some(id) = vocab.id(word) {
            if found.contains_key(&id) {
                continue;
            }
            let parsed = values
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| bad(format!("bad number: {e}")))?;
            found.insert(id, parsed);
        }
    }
    let d_ca = width.filter(|&w| w > 0).unwrap_or(fallback_dim);
    Ok(assemble(vocab.len(), d_ca, found, rng))
}

/// Opens `path` (when given) and delegates to [`read_pretrained_embeddings`];
/// without a path every row is random.
pub fn load_pretrained_embeddings<G: Rng + ?Sized>(
    path: Option<&Path>,
    vocab: &AnchorVocab,
    d_ca: usize,
    rng: &mut G,
) -> Result<EmbeddingInit> {
    match path {
        Some(p) => {
            let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            read_pretrained_embeddings(
                std::io::BufReader::new(file),
                &p.display().to_string(),
                vocab,
                d_ca,
                rng,
            )
        }
        None => Ok(assemble(vocab.len(), d_ca, HashMap::new(), rng)),
    }
}

fn assemble<G: Rng + ?Sized>(
    rows: usize,
    d_ca: usize,
    mut found: HashMap<usize, Vec<f64>>,
    rng: &mut G,
) -> EmbeddingInit {
    let mut data = Vec::with_capacity(rows * d_ca);
    let mut oov_mask = Vec::with_capacity(rows);
    for id in 0..rows {
        match found.remove(&id) {
            Some(v) => {
                data.extend(v);
                oov_mask.push(false);
            }
            None => {
                data.extend((0..d_ca).map(|_| rng.random_range(-OOV_RANGE..=OOV_RANGE)));
                oov_mask.push(true);
            }
        }
    }
    EmbeddingInit {
        matrix: Array::new(&[rows, d_ca], data).expect("matrix shape"),
        d_ca,
        oov_mask,
    }
}
