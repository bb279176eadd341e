use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::LN_EPS;
use crate::params::Bound;
use crate::rng::Rng;
use crate::tensor::{Array, TensorError, Var};
use crate::Result;

pub const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

/// Dropout settings for one forward pass; `rng` is `None` at inference.
pub struct Dropout {
    pub p: f64,
    rng: Option<RefCell<Rng>>,
}

impl Dropout {
    pub fn train(p: f64, rng: Rng) -> Self {
        Self {
            p,
            rng: Some(RefCell::new(rng)),
        }
    }

    pub fn eval() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&self, p: &Bound, x: Var) -> Result<Var> {
        match &self.rng {
            Some(rng) => Ok(p.tape.dropout(x, self.p, true, &mut *rng.borrow_mut())?),
            None => Ok(x),
        }
    }
}

/// Interleaved sinusoidal positions: slot `2i` holds `sin(pos / 10000^(2i/dim))`
/// and slot `2i+1` the matching cosine.
pub fn sinusoidal_pe(length: usize, dim: usize) -> Result<Array, TensorError> {
    if dim % 2 != 0 {
        return Err(TensorError::InvalidParameter(format!(
            "positional encoding width must be even, got {dim}"
        )));
    }
    Ok(Array::from_fn(&[length, dim], |i| {
        let (pos, j) = (i / dim, i % dim);
        let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

pub(crate) fn layer_norm(p: &Bound, x: Var, name: &str) -> Result<Var> {
    let g = p.get(&format!("{name}.g"))?;
    let b = p.get(&format!("{name}.b"))?;
    Ok(p.tape.layer_norm(x, g, b, LN_EPS)?)
}

pub(crate) fn feed_forward(p: &Bound, x: Var, name: &str, act: Activation) -> Result<Var> {
    let h = p.linear(x, &format!("{name}.ff1"))?;
    let h = match act {
        Activation::Relu => p.tape.relu(h),
        Activation::Gelu => p.tape.gelu(h),
    };
    p.linear(h, &format!("{name}.ff2"))
}

/// Additive `q_len×k_len` mask: `-inf` where a key is invalid or, when
/// `causal`, lies after the query.
pub fn attention_mask(q_len: usize, key_valid: &[bool], causal: bool) -> Option<Array> {
    let k_len = key_valid.len();
    if !causal && key_valid.iter().all(|&v| v) {
        return None;
    }
    Some(Array::from_fn(&[q_len, k_len], |i| {
        let (q, k) = (i / k_len, i % k_len);
        if !key_valid[k] || (causal && k > q) {
            NEG_INF
        } else {
            0.0
        }
    }))
}

/// Scaled dot-product attention over `heads` slices of the projected
/// queries, keys and values, followed by the output projection.
/// `{name}.q/k/v/o` are linear layers.
pub fn multi_head_attention(
    p: &Bound,
    q_in: Var,
    kv_in: Var,
    name: &str,
    heads: usize,
    mask: Option<&Array>,
) -> Result<Var> {
    let t = p.tape;
    let q = p.linear(q_in, &format!("{name}.q"))?;
    let k = p.linear(kv_in, &format!("{name}.k"))?;
    let v = p.linear(kv_in, &format!("{name}.v"))?;
    let d = t.shape(q)[1];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask = mask.map(|m| t.constant(m.clone()));
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.narrow(q, 1, h * dh, dh)?;
        let kh = t.narrow(k, 1, h * dh, dh)?;
        let vh = t.narrow(v, 1, h * dh, dh)?;
        let scores = t.scale(t.matmul(qh, t.transpose(kh)?)?, scale);
        let scores = match mask {
            Some(m) => t.add(scores, m)?,
            None => scores,
        };
        let w = t.softmax(scores, 1)?;
        outs.push(t.matmul(w, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { t.concat(&outs, 1)? };
    p.linear(joined, &format!("{name}.o"))
}
