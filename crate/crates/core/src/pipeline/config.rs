use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchors::WordType;
use crate::ccm::{CcmConfig, HingePlacement};
use crate::model::ModelConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Parameters and optimizer moments are rounded to `f32` after every
    /// update; arithmetic stays in `f64`.
    #[default]
    F32,
    F64,
}

/// Every training hyperparameter. Serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the triplet loss.
    pub lambda: f64,
    /// Triplet margin.
    pub mu: f64,
    pub frame_cap: usize,
    pub model: ModelConfig,
    pub anchor_preset: WordType,
    pub anchor_min_count: usize,
    pub anchor_max_doc_fraction: f64,
    pub d_ca: usize,
    pub ccm_heads: usize,
    pub ccm_hidden: usize,
    pub hinge: HingePlacement,
    pub bpe_vocab_size: usize,
    pub seed: u64,
    /// Update the backbone; when false it stays at its initial values.
    pub e2e: bool,
    /// Sinusoidal positions on the encoder input.
    pub pe: bool,
    /// Contrastive concept mining in the objective.
    pub ccm: bool,
    pub precision: Precision,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beam_size: usize,
    pub max_decode_len: usize,
    /// Pretrained word vectors for anchor initialization.
    pub embeddings: Option<PathBuf>,
    /// POS lexicon replacing the built-in one.
    pub lexicon: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            warmup_steps: 1000,
            epochs: 30,
            batch_size: 16,
            lambda: 1.0,
            mu: 0.4,
            frame_cap: 512,
            model: ModelConfig::default(),
            anchor_preset: WordType::VN,
            anchor_min_count: crate::anchors::DEFAULT_MIN_COUNT,
            anchor_max_doc_fraction: crate::anchors::DEFAULT_MAX_DOC_FRACTION,
            d_ca: 300,
            ccm_heads: 4,
            ccm_hidden: 64,
            hinge: HingePlacement::OverMean,
            bpe_vocab_size: crate::bpe::DEFAULT_VOCAB_SIZE,
            seed: 0,
            e2e: true,
            pe: true,
            ccm: true,
            precision: Precision::F32,
            weight_decay: 0.01,
            grad_clip: 1.0,
            beam_size: 5,
            max_decode_len: 64,
            embeddings: None,
            lexicon: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings: `d`-wide model, `layers` layers and `heads`
    /// heads everywhere.
    pub fn small(d: usize, layers: usize, heads: usize) -> Self {
        Self {
            model: ModelConfig::small(d, layers, heads, 0),
            d_ca: d,
            ccm_heads: heads,
            ccm_hidden: d / heads,
            ..Self::default()
        }
    }

    pub fn ccm_config(&self) -> CcmConfig {
        CcmConfig {
            margin: self.mu,
            weight: self.lambda,
            heads: self.ccm_heads,
            hidden: self.ccm_hidden,
            d_ca: self.d_ca,
            hinge: self.hinge,
        }
    }

    /// Model configuration with the flags and vocabulary size applied.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut m = self.model.clone();
        m.pe = self.pe;
        m.vocab_size = vocab_size;
        m
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("frame_cap", self.frame_cap),
            ("beam_size", self.beam_size),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning_rate and grad_clip must be positive, weight_decay non-negative".into(),
            ));
        }
        if self.ccm {
            self.ccm_config().validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
