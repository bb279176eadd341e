//! Gloss-free sign language translation from pose keypoints.
//!
//! The crate covers the whole path from extracted keypoints to text:
//!
//! - [`tensor`]: arrays and reverse-mode differentiation
//! - [`anchors`]: conceptual anchor word mining and embedding initialization
//! - [`bpe`]: byte-pair-encoding subword tokenizer
//! - [`pose`]: keypoint sequences and the graph-convolutional backbone
//! - [`model`]: visual-to-text encoder, causal decoder and beam search
//! - [`ccm`]: contrastive concept mining (anchor cross-attention and
//!   inter-sample triplet loss)
//! - [`metrics`]: corpus BLEU and ROUGE-L
//! - [`pipeline`]: data, optimizer, training, inference and checkpoints

pub mod anchors;
pub mod bpe;
pub mod ccm;
mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod pose;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
