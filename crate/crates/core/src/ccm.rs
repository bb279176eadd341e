//! Contrastive concept mining.
//!
//! Batch anchor words query every sample's encoder output through a
//! bias-free multi-head cross-attention. For each anchor, the query result
//! from a sample containing the word (positive) should be closer to the
//! anchor embedding than the result from a sample lacking it (negative).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::anchors::{tokenize, AnchorVocab, EmbeddingInit};
use crate::params::{Bound, Init, ParamStore};
use crate::tensor::{Array, Tape, Var};
use crate::{Error, Result};

pub const CCM_PREFIX: &str = "ccm.";
pub const ANCHOR_TABLE: &str = "ccm.anchor_embed";
const W_Q: &str = "ccm.w_q";
const W_K: &str = "ccm.w_k";
const W_V: &str = "ccm.w_v";
const W_O: &str = "ccm.w_o";
const COS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingePlacement {
    /// `max(0, mean(l_m))`
    #[default]
    OverMean,
    /// `mean(max(0, l_m))`
    PerTriplet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcmConfig {
    /// Triplet margin μ.
    pub margin: f64,
    /// Weight λ of the triplet loss in the joint objective.
    pub weight: f64,
    pub heads: usize,
    /// Per-head width.
    pub hidden: usize,
    pub d_ca: usize,
    pub hinge: HingePlacement,
}

impl Default for CcmConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            weight: 1.0,
            heads: 4,
            hidden: 64,
            d_ca: 300,
            hinge: HingePlacement::OverMean,
        }
    }
}

impl CcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config("ccm margin must be positive".into()));
        }
        if !(self.weight >= 0.0) {
            return Err(Error::Config("ccm weight must be non-negative".into()));
        }
        if self.heads == 0 || self.hidden == 0 || self.d_ca == 0 {
            return Err(Error::Config("ccm heads, hidden and d_ca must be positive".into()));
        }
        Ok(())
    }
}

/// Anchor table from `init` plus the four projections, without biases.
/// `W_Q` holds every head's `d_ca×d` block side by side; likewise `W_K`,
/// `W_V`.
pub fn init_ccm(store: &mut ParamStore, cfg: &CcmConfig, d_visual: usize, init: &EmbeddingInit, seed: u64) -> Result<()> {
    cfg.validate()?;
    if init.d_ca != cfg.d_ca {
        return Err(Error::Config(format!(
            "anchor embeddings are {}-wide but d_ca is {}",
            init.d_ca, cfg.d_ca
        )));
    }
    let hd = cfg.heads * cfg.hidden;
    store.insert(ANCHOR_TABLE, init.matrix.clone());
    store.init(seed, W_Q, &[cfg.d_ca, hd], Init::Xavier);
    store.init(seed, W_K, &[d_visual, hd], Init::Xavier);
    store.init(seed, W_V, &[d_visual, hd], Init::Xavier);
    store.init(seed, W_O, &[hd, cfg.d_ca], Init::Xavier);
    Ok(())
}

/// Anchors present in a batch, each with the samples that contain it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchAnchorSet {
    /// Anchor ids in ascending order.
    pub anchors: Vec<usize>,
    pub membership: Vec<BTreeSet<usize>>,
    pub num_samples: usize,
}

impl BatchAnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Scans word-level tokens of each translation for anchor words.
pub fn collect_batch_anchors<S: AsRef<str>>(translations: &[S], vocab: &AnchorVocab) -> BatchAnchorSet {
    let mut found: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for (n, text) in translations.iter().enumerate() {
        for tok in tokenize(text.as_ref()) {
            if let Some(id) = vocab.id(&tok) {
                found.entry(id).or_default().insert(n);
            }
        }
    }
    let (anchors, membership) = found.into_iter().unzip();
    BatchAnchorSet {
        anchors,
        membership,
        num_samples: translations.len(),
    }
}

/// Query results on a tape: the batch anchor embeddings `Q` (`M×d_ca`) and,
/// per sample, `H_n` (`M×d_ca`).
#[derive(Clone, Debug)]
pub struct QueryVars {
    pub q: Var,
    pub h: Vec<Var>,
}

/// `H` stacked as `M×N×d_ca`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryTensor {
    pub h: Array,
}

impl QueryTensor {
    pub fn from_vars(tape: &Tape, q: &QueryVars) -> Self {
        let n = q.h.len();
        let Some(first) = q.h.first() else {
            return Self { h: Array::zeros(&[0, 0, 0]) };
        };
        let shape = tape.shape(*first);
        let (m, d) = (shape[0], shape[1]);
        let values: Vec<_> = q.h.iter().map(|&v| tape.value(v)).collect();
        let h = Array::from_fn(&[m, n, d], |i| {
            let (mi, rest) = (i / (n * d), i % (n * d));
            values[rest / d].data()[mi * d + rest % d]
        });
        Self { h }
    }
}

/// Multi-head cross-attention from batch anchors to each sample's encoder
/// output, masking padded positions. `encoded` pairs each sample's
/// `L×d_visual` features with its validity mask.
pub fn anchor_query(
    p: &Bound,
    batch: &BatchAnchorSet,
    encoded: &[(Var, &[bool])],
    cfg: &CcmConfig,
) -> Result<Option<QueryVars>> {
    if batch.is_empty() {
        return Ok(None);
    }
    let t = p.tape;
    let q = t.embedding(p.get(ANCHOR_TABLE)?, &batch.anchors)?;
    let qp = t.matmul(q, p.get(W_Q)?)?;
    let (w_k, w_v, w_o) = (p.get(W_K)?, p.get(W_V)?, p.get(W_O)?);
    let d = cfg.hidden;
    let scale = 1.0 / (d as f64).sqrt();
    let m = batch.len();
    let mut h = Vec::with_capacity(encoded.len());
    for &(s, valid) in encoded {
        let k = t.matmul(s, w_k)?;
        let v = t.matmul(s, w_v)?;
        let len = valid.len();
        let mask = (!valid.iter().all(|&x| x)).then(|| {
            t.constant(Array::from_fn(&[m, len], |i| {
                if valid[i % len] {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }))
        });
        let mut heads = Vec::with_capacity(cfg.heads);
        for i in 0..cfg.heads {
            let qh = t.narrow(qp, 1, i * d, d)?;
            let kh = t.narrow(k, 1, i * d, d)?;
            let vh = t.narrow(v, 1, i * d, d)?;
            let mut scores = t.scale(t.matmul(qh, t.transpose(kh)?)?, scale);
            if let Some(mask) = mask {
                scores = t.add(scores, mask)?;
            }
            heads.push(t.matmul(t.softmax(scores, 1)?, vh)?);
        }
        let joined = if cfg.heads == 1 { heads[0] } else { t.concat(&heads, 1)? };
        h.push(t.matmul(joined, w_o)?);
    }
    Ok(Some(QueryVars { q, h }))
}

/// Indices into a [`BatchAnchorSet`]: anchor `m`, a sample containing it and
/// one that does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub m: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletDraw {
    pub triplets: Vec<Triplet>,
    /// Anchors with no positive or no negative sample in the batch.
    pub skipped: usize,
}

/// One uniformly drawn positive and negative per anchor.
pub fn sample_triplets<R: rand::Rng + ?Sized>(batch: &BatchAnchorSet, rng: &mut R) -> TripletDraw {
    let mut draw = TripletDraw::default();
    for (m, members) in batch.membership.iter().enumerate() {
        let pos: Vec<usize> = members.iter().copied().collect();
        let neg: Vec<usize> = (0..batch.num_samples).filter(|n| !members.contains(n)).collect();
        if pos.is_empty() || neg.is_empty() {
            draw.skipped += 1;
            continue;
        }
        let p = pos[rng.random_range(0..pos.len())];
        let n = neg[rng.random_range(0..neg.len())];
        draw.triplets.push(Triplet { m, pos: p, neg: n });
    }
    draw
}

/// Triplet loss node together with the similarities it was built from.
#[derive(Clone, Debug)]
pub struct TripletLoss {
    pub loss: Var,
    pub pos_sims: Vec<f64>,
    pub neg_sims: Vec<f64>,
}

/// `l_m = μ − cos(H[m][pos], Q_m) + cos(H[m][neg], Q_m)`, reduced per
/// `hinge`. No triplets gives a constant zero.
pub fn triplet_loss(
    tape: &Tape,
    query: Option<&QueryVars>,
    triplets: &[Triplet],
    margin: f64,
    hinge: HingePlacement,
) -> Result<TripletLoss> {
    let (Some(query), false) = (query, triplets.is_empty()) else {
        return Ok(TripletLoss {
            loss: tape.constant(Array::scalar(0.0)),
            pos_sims: Vec::new(),
            neg_sims: Vec::new(),
        });
    };
    let mu = tape.constant(Array::scalar(margin));
    let mut total: Option<Var> = None;
    let mut pos_sims = Vec::with_capacity(triplets.len());
    let mut neg_sims = Vec::with_capacity(triplets.len());
    let mut rows = std::collections::HashMap::new();
    for tr in triplets {
        let q_m = match rows.get(&tr.m) {
            Some(&v) => v,
            None => {
                let v = tape.narrow(query.q, 0, tr.m, 1)?;
                rows.insert(tr.m, v);
                v
            }
        };
        let hp = tape.narrow(query.h[tr.pos], 0, tr.m, 1)?;
        let hn = tape.narrow(query.h[tr.neg], 0, tr.m, 1)?;
        let sp = tape.cosine_similarity(hp, q_m, COS_EPS)?;
        let sn = tape.cosine_similarity(hn, q_m, COS_EPS)?;
        pos_sims.push(tape.item(sp));
        neg_sims.push(tape.item(sn));
        let diff = tape.sub(sn, sp)?;
        let term = match hinge {
            HingePlacement::OverMean => diff,
            HingePlacement::PerTriplet => tape.hinge(tape.add(diff, mu)?)?,
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let mean = tape.scale(total.expect("non-empty"), 1.0 / triplets.len() as f64);
    let loss = match hinge {
        HingePlacement::OverMean => tape.hinge(tape.add(mean, mu)?)?,
        HingePlacement::PerTriplet => mean,
    };
    Ok(TripletLoss {
        loss,
        pos_sims,
        neg_sims,
    })
}

/// `L = L_ce + λ·L_itl`
pub fn combined_loss(tape: &Tape, l_ce: Var, l_itl: Var, weight: f64) -> Result<Var> {
    Ok(tape.add(l_ce, tape.scale(l_itl, weight))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorVocab;

    fn vocab(words: &[&str]) -> AnchorVocab {
        AnchorVocab::from_entries(
            words.iter().map(|w| (w.to_string(), 11, 1)).collect(),
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn membership_is_a_set() {
        let b = collect_batch_anchors(&["snow snow falls", "rain"], &vocab(&["snow", "rain", "falls"]));
        assert_eq!(b.anchors, [0, 1, 2]);
        assert_eq!(b.membership[0], BTreeSet::from([0]));
        assert_eq!(b.membership[2], BTreeSet::from([0]));
    }
}
