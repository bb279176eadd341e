use super::layers::{attention_mask, feed_forward, layer_norm, multi_head_attention, Dropout};
use super::{ModelConfig, DECODER_PREFIX};
use crate::bpe::PAD;
use crate::params::Bound;
use crate::tensor::{Reduction, Var};
use crate::{Error, Result};

/// The word embedding, shared with the output projection.
pub const TOKEN_EMBED: &str = "dec.tok_embed";

/// Decoder states and logits for every input position.
#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    pub states: Var,
    pub logits: Var,
}

/// Causal decoder over `ids` (BOS first) attending to `f_enc`. Logits come
/// from multiplying the final states by the transposed token embedding.
pub fn decode_teacher_forced(
    p: &Bound,
    f_enc: Var,
    enc_valid: &[bool],
    ids: &[usize],
    cfg: &ModelConfig,
    drop: &Dropout,
) -> Result<DecoderOutput> {
    let t = p.tape;
    let d = &cfg.decoder;
    let len = ids.len();
    if len == 0 {
        return Err(Error::InvalidInput("empty decoder input".into()));
    }
    if len > d.max_positions {
        return Err(Error::InvalidInput(format!(
            "target of {len} tokens exceeds {} positions",
            d.max_positions
        )));
    }
    let embed = p.get(TOKEN_EMBED)?;
    let tok = t.embedding(embed, ids)?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = t.embedding(p.get(&format!("{DECODER_PREFIX}pos_embed"))?, &positions)?;
    let mut x = t.add(tok, pos)?;
    x = layer_norm(p, x, &format!("{DECODER_PREFIX}ln_emb"))?;
    x = drop.apply(p, x)?;

    let self_mask = attention_mask(len, &vec![true; len], true);
    let cross_mask = attention_mask(len, enc_valid, false);
    for i in 0..d.layers {
        let l = format!("{DECODER_PREFIX}l{i}");
        let h = layer_norm(p, x, &format!("{l}.ln1"))?;
        let h = multi_head_attention(p, h, h, &format!("{l}.self"), d.heads, self_mask.as_ref())?;
        x = t.add(x, drop.apply(p, h)?)?;
        let h = layer_norm(p, x, &format!("{l}.ln2"))?;
        let h = multi_head_attention(p, h, f_enc, &format!("{l}.cross"), d.heads, cross_mask.as_ref())?;
        x = t.add(x, drop.apply(p, h)?)?;
        let h = layer_norm(p, x, &format!("{l}.ln3"))?;
        let h = feed_forward(p, h, &l, d.activation)?;
        x = t.add(x, drop.apply(p, h)?)?;
    }
    if d.layers > 0 {
        x = layer_norm(p, x, &format!("{DECODER_PREFIX}ln_f"))?;
    }
    let logits = t.matmul(x, t.transpose(embed)?)?;
    Ok(DecoderOutput { states: x, logits })
}

fn shifted_targets(ids: &[usize]) -> Vec<usize> {
    ids.iter().skip(1).copied().chain([PAD]).collect()
}

/// Summed cross-entropy of position `i` predicting `ids[i+1]`, skipping PAD
/// targets. Returns the loss and the number of counted positions.
pub fn translation_loss_sum(p: &Bound, logits: Var, ids: &[usize]) -> Result<(Var, usize)> {
    Ok(p.tape.cross_entropy(logits, &shifted_targets(ids), PAD, Reduction::Sum)?)
}

/// Mean cross-entropy over non-PAD predicted positions.
pub fn translation_loss(p: &Bound, logits: Var, ids: &[usize]) -> Result<Var> {
    Ok(p.tape.cross_entropy_logits(logits, &shifted_targets(ids), PAD)?)
}
