use std::path::Path;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::data::{load_dataset, write_translations, DatasetManifest, Sample};
use super::thread_pool;
use crate::bpe::BpeModel;
use crate::metrics::{evaluate as score, EvalReport};
use crate::model::{beam_search, BeamConfig, EncodedFeatures, ModelConfig, TransformerScorer};
use crate::params::ParamStore;
use crate::pose::{BackboneOutput, PoseSequence};
use crate::{Error, Result};

/// Pose sequence → text with a trained model. Anchors and the CCM
/// parameters play no part here.
pub struct Translator {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub bpe: BpeModel,
    pub beam: BeamConfig,
    pub frame_cap: usize,
}

impl Translator {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        let max_len = ckpt.config.max_decode_len.min(ckpt.model.decoder.max_positions - 1);
        Self {
            beam: BeamConfig::new(ckpt.config.beam_size, max_len),
            frame_cap: ckpt.config.frame_cap,
            model: ckpt.model,
            params: ckpt.params,
            bpe: ckpt.bpe,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self::from_checkpoint(Checkpoint::load(dir)?))
    }

    pub fn translate(&self, seq: &PoseSequence) -> Result<String> {
        let seq = seq.subsample(self.frame_cap);
        let feats = BackboneOutput::compute(&self.params, &seq, &self.model.backbone)?;
        let valid = vec![true; feats.features.shape()[0]];
        let encoded = EncodedFeatures::compute(&self.params, &feats.features, &valid, &self.model)?;
        let scorer = TransformerScorer {
            store: &self.params,
            cfg: &self.model,
            encoded: &encoded,
        };
        let best = beam_search(&scorer, &self.beam)?;
        self.bpe.decode(best.text_ids())
    }

    /// Translations in input order, computed in parallel.
    pub fn translate_all(&self, samples: &[Sample]) -> Result<Vec<String>> {
        thread_pool()?.install(|| samples.par_iter().map(|s| self.translate(&s.pose)).collect())
    }
}

/// Translates every sample of `manifest` and scores against its texts.
/// Writes `report.json` and `hypotheses.tsv` into `out_dir` when given.
pub fn evaluate_manifest(
    translator: &Translator,
    manifest: &DatasetManifest,
    out_dir: Option<&Path>,
) -> Result<(EvalReport, Vec<String>)> {
    if manifest.samples.is_empty() {
        return Err(Error::InvalidInput("evaluation manifest has no samples".into()));
    }
    let samples = load_dataset(manifest, translator.frame_cap)?;
    let hyps = translator.translate_all(&samples)?;
    let refs: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    let report = score(&hyps, &refs)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
        let tsv = write_translations(samples.iter().zip(&hyps).map(|(s, h)| (s.id(), h.as_str())));
        let path = dir.join("hypotheses.tsv");
        std::fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
    }
    Ok((report, hyps))
}
