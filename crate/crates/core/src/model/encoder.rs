use super::layers::{attention_mask, feed_forward, layer_norm, multi_head_attention, sinusoidal_pe, Dropout};
use super::{ModelConfig, ENCODER_PREFIX};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Array, Tape, Var};
use crate::Result;

/// Encoder output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFeatures {
    /// `L_enc × d_visual`
    pub tokens: Array,
    /// `true` for real positions, `false` for padding.
    pub pad_mask: Vec<bool>,
}

/// Pre-norm transformer encoder over backbone features. Padding positions
/// are masked out as keys. With zero layers this returns the input plus
/// positions.
pub fn encode(
    p: &Bound,
    features: Var,
    pad_mask: &[bool],
    cfg: &ModelConfig,
    drop: &Dropout,
) -> Result<Var> {
    let t = p.tape;
    let shape = t.shape(features);
    let len = shape[0];
    if pad_mask.len() != len {
        return Err(crate::Error::InvalidInput(format!(
            "pad mask has {} entries for {len} positions",
            pad_mask.len()
        )));
    }
    if !pad_mask.iter().any(|&v| v) {
        return Err(crate::Error::InvalidInput("every encoder position is padding".into()));
    }
    let e = &cfg.encoder;
    if len > e.max_positions {
        return Err(crate::Error::InvalidInput(format!(
            "encoder input of {len} steps exceeds {} positions",
            e.max_positions
        )));
    }
    let mut x = features;
    if cfg.pe {
        let pe = t.constant(sinusoidal_pe(len, shape[1])?);
        x = t.add(x, pe)?;
    }
    let mask = attention_mask(len, pad_mask, false);
    for i in 0..e.layers {
        let l = format!("{ENCODER_PREFIX}l{i}");
        let h = layer_norm(p, x, &format!("{l}.ln1"))?;
        let h = multi_head_attention(p, h, h, &format!("{l}.attn"), e.heads, mask.as_ref())?;
        x = t.add(x, drop.apply(p, h)?)?;
        let h = layer_norm(p, x, &format!("{l}.ln2"))?;
        let h = feed_forward(p, h, &l, e.activation)?;
        x = t.add(x, drop.apply(p, h)?)?;
    }
    if e.layers > 0 {
        x = layer_norm(p, x, &format!("{ENCODER_PREFIX}ln_f"))?;
    }
    Ok(x)
}

impl EncodedFeatures {
    /// Runs the encoder outside of training.
    pub fn compute(
        store: &ParamStore,
        features: &Array,
        pad_mask: &[bool],
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let x = tape.constant(features.clone());
        let out = encode(&p, x, pad_mask, cfg, &Dropout::eval())?;
        Ok(Self {
            tokens: (*tape.value(out)).clone(),
            pad_mask: pad_mask.to_vec(),
        })
    }
}
