//! Visual-to-text transformer encoder, causal text decoder and decoding.

mod beam;
mod decoder;
mod encoder;
mod layers;

use serde::{Deserialize, Serialize};

pub use beam::{beam_search, greedy_decode, BeamConfig, GenerationResult, StepScorer, TransformerScorer};
pub use decoder::{decode_teacher_forced, translation_loss, translation_loss_sum, DecoderOutput, TOKEN_EMBED};
pub use encoder::{encode, EncodedFeatures};
pub use layers::{attention_mask, multi_head_attention, sinusoidal_pe, Activation, Dropout, NEG_INF};

use crate::params::{Init, ParamStore};
use crate::pose::{init_backbone, BackboneConfig};
use crate::{Error, Result};

pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIX: &str = "dec.";
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub model_dim: usize,
    pub dropout: f64,
    /// Longest accepted sequence (decoder positional table size).
    pub max_positions: usize,
    pub activation: Activation,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            layers: 4,
            ff_dim: 1024,
            model_dim: 768,
            dropout: 0.1,
            max_positions: 128,
            activation: Activation::Relu,
        }
    }
}

impl TransformerConfig {
    fn validate(&self, what: &str) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{what}: model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("{what}: dropout must lie in [0, 1)")));
        }
        if self.ff_dim == 0 || self.max_positions == 0 {
            return Err(Error::Config(format!("{what}: ff_dim and max_positions must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Runs at the backbone's `d_visual`.
    pub encoder: TransformerConfig,
    pub decoder: TransformerConfig,
    pub vocab_size: usize,
    /// Add sinusoidal positions to the backbone output.
    pub pe: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let backbone = BackboneConfig::default();
        Self {
            encoder: TransformerConfig {
                model_dim: backbone.d_visual,
                max_positions: 512,
                ..TransformerConfig::default()
            },
            backbone,
            decoder: TransformerConfig::default(),
            vocab_size: crate::bpe::DEFAULT_VOCAB_SIZE,
            pe: true,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration with every width equal to `d`.
    pub fn small(d: usize, layers: usize, heads: usize, vocab_size: usize) -> Self {
        let stack = TransformerConfig {
            heads,
            layers,
            ff_dim: 2 * d,
            model_dim: d,
            ..TransformerConfig::default()
        };
        Self {
            backbone: BackboneConfig {
                hidden: 16,
                d_visual: d,
                ..BackboneConfig::default()
            },
            encoder: TransformerConfig {
                max_positions: 512,
                ..stack.clone()
            },
            decoder: stack,
            vocab_size,
            pe: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.skeleton.validate()?;
        self.encoder.validate("encoder")?;
        self.decoder.validate("decoder")?;
        if self.encoder.model_dim != self.backbone.d_visual {
            return Err(Error::Config(format!(
                "encoder model_dim {} must equal backbone d_visual {}",
                self.encoder.model_dim, self.backbone.d_visual
            )));
        }
        if self.pe && self.encoder.model_dim % 2 != 0 {
            return Err(Error::Config("positional encoding needs an even encoder width".into()));
        }
        if self.vocab_size <= crate::bpe::UNK {
            return Err(Error::Config("vocabulary must hold the four special tokens".into()));
        }
        Ok(())
    }
}

fn init_ln(store: &mut ParamStore, seed: u64, name: &str, d: usize) {
    store.init(seed, &format!("{name}.g"), &[d], Init::Ones);
    store.init(seed, &format!("{name}.b"), &[d], Init::Zeros);
}

fn init_attention(store: &mut ParamStore, seed: u64, name: &str, d_q: usize, d_kv: usize, d: usize) {
    store.init_linear(seed, &format!("{name}.q"), d_q, d);
    store.init_linear(seed, &format!("{name}.k"), d_kv, d);
    store.init_linear(seed, &format!("{name}.v"), d_kv, d);
    store.init_linear(seed, &format!("{name}.o"), d, d);
}

fn init_ff(store: &mut ParamStore, seed: u64, name: &str, d: usize, ff: usize) {
    store.init_linear(seed, &format!("{name}.ff1"), d, ff);
    store.init_linear(seed, &format!("{name}.ff2"), ff, d);
}

/// Backbone, encoder and decoder parameters.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    init_backbone(&mut store, &cfg.backbone, seed);

    let e = &cfg.encoder;
    for i in 0..e.layers {
        let l = format!("{ENCODER_PREFIX}l{i}");
        init_ln(&mut store, seed, &format!("{l}.ln1"), e.model_dim);
        init_attention(&mut store, seed, &format!("{l}.attn"), e.model_dim, e.model_dim, e.model_dim);
        init_ln(&mut store, seed, &format!("{l}.ln2"), e.model_dim);
        init_ff(&mut store, seed, &l, e.model_dim, e.ff_dim);
    }
    if e.layers > 0 {
        init_ln(&mut store, seed, &format!("{ENCODER_PREFIX}ln_f"), e.model_dim);
    }

    let d = &cfg.decoder;
    let dm = d.model_dim;
    store.init(seed, TOKEN_EMBED, &[cfg.vocab_size, dm], Init::Uniform(0.1));
    store.init(seed, &format!("{DECODER_PREFIX}pos_embed"), &[d.max_positions, dm], Init::Uniform(0.1));
    init_ln(&mut store, seed, &format!("{DECODER_PREFIX}ln_emb"), dm);
    for i in 0..d.layers {
        let l = format!("{DECODER_PREFIX}l{i}");
        init_ln(&mut store, seed, &format!("{l}.ln1"), dm);
        init_attention(&mut store, seed, &format!("{l}.self"), dm, dm, dm);
        init_ln(&mut store, seed, &format!("{l}.ln2"), dm);
        init_attention(&mut store, seed, &format!("{l}.cross"), dm, e.model_dim, dm);
        init_ln(&mut store, seed, &format!("{l}.ln3"), dm);
        init_ff(&mut store, seed, &l, dm, d.ff_dim);
    }
    if d.layers > 0 {
        init_ln(&mut store, seed, &format!("{DECODER_PREFIX}ln_f"), dm);
    }
    Ok(store)
}
