use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{Precision, TrainConfig};
use super::data::Sample;
use super::optim::{clip_grad_norm, lr_schedule, AdamW, AdamWState};
use super::thread_pool;
use crate::anchors::{load_pretrained_embeddings, select_anchors, AnchorFilter, AnchorVocab, Lexicon, TaggedSentence};
use crate::bpe::BpeModel;
use crate::ccm::{anchor_query, collect_batch_anchors, init_ccm, sample_triplets, triplet_loss, TripletDraw, CCM_PREFIX};
use crate::model::{decode_teacher_forced, encode, init_model, translation_loss_sum, Dropout, ModelConfig};
use crate::params::{Bound, ParamStore};
use crate::pose::{backbone_forward, BACKBONE_PREFIX};
use crate::rng;
use crate::tensor::{Array, Tape, Var};
use crate::{Error, Result};

/// One line of training telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub l_ce: f64,
    pub l_itl: f64,
    pub loss: f64,
    /// Retained triplets.
    pub triplets: usize,
    /// Batch anchors lacking a positive or a negative sample.
    pub skipped: usize,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Mean anchor similarities of positive and negative query results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcmProbe {
    pub pos_sim: f64,
    pub neg_sim: f64,
    pub l_itl: f64,
    pub triplets: usize,
}

struct Prepared {
    sample: Sample,
    ids: Vec<usize>,
}

struct Forward {
    tape: Tape,
    vars: BTreeMap<String, Var>,
    f_enc: Var,
    ce: Var,
    count: usize,
}

fn is_trainable_all(_: &str) -> bool {
    true
}

fn is_trainable_frozen_backbone(name: &str) -> bool {
    !name.starts_with(BACKBONE_PREFIX)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub params: ParamStore,
    pub optimizer: AdamWState,
    pub bpe: BpeModel,
    pub anchors: Option<AnchorVocab>,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub telemetry: Vec<StepRecord>,
    samples: Vec<Prepared>,
    pool: rayon::ThreadPool,
    sink: Option<BufWriter<File>>,
}

fn prepare(samples: Vec<Sample>, bpe: &BpeModel, model: &ModelConfig, frame_cap: usize) -> Result<Vec<Prepared>> {
    samples
        .into_iter()
        .map(|s| {
            let ids = bpe.encode(&s.text, true);
            if ids.len() > model.decoder.max_positions {
                return Err(Error::Load {
                    sample_id: s.id().to_string(),
                    message: format!(
                        "{} target tokens exceed {} decoder positions",
                        ids.len(),
                        model.decoder.max_positions
                    ),
                });
            }
            let sample = Sample {
                pose: s.pose.subsample(frame_cap),
                text: s.text,
            };
            Ok(Prepared { sample, ids })
        })
        .collect()
}

/// Mines anchors from the training translations with the configured tag
/// preset and thresholds.
pub fn mine_anchors(config: &TrainConfig, texts: &[&str]) -> Result<AnchorVocab> {
    let lexicon = match &config.lexicon {
        Some(p) => Lexicon::from_file(p)?,
        None => Lexicon::builtin(),
    };
    let corpus: Vec<TaggedSentence> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| TaggedSentence::from_text(t, &lexicon, i))
        .collect();
    let filter = AnchorFilter {
        min_count: config.anchor_min_count,
        max_doc_fraction: config.anchor_max_doc_fraction,
        ..AnchorFilter::preset(config.anchor_preset)
    };
    Ok(select_anchors(&corpus, &filter))
}

impl Trainer {
    /// Trains the tokenizer, mines anchors and initializes every parameter.
    pub fn new(config: TrainConfig, samples: Vec<Sample>) -> Result<Self> {
        Self::with_resources(config, samples, None, None)
    }

    /// Like [`Trainer::new`] but reuses a prepared tokenizer and anchor
    /// vocabulary where given.
    pub fn with_resources(
        config: TrainConfig,
        samples: Vec<Sample>,
        bpe: Option<BpeModel>,
        anchors: Option<AnchorVocab>,
    ) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::InvalidInput("no training samples".into()));
        }
        let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
        let bpe = match bpe {
            Some(b) => b,
            None => BpeModel::train(&texts, config.bpe_vocab_size)?,
        };
        let model = config.model_config(bpe.vocab_size());
        let mut params = init_model(&model, config.seed)?;
        let anchors = if config.ccm {
            let vocab = match anchors {
                Some(a) => a,
                None => mine_anchors(&config, &texts)?,
            };
            let mut g = rng::stream(config.seed, &[rng::label("anchor_embed")]);
            let init = load_pretrained_embeddings(config.embeddings.as_deref(), &vocab, config.d_ca, &mut g)?;
            init_ccm(&mut params, &config.ccm_config(), model.backbone.d_visual, &init, config.seed)?;
            Some(vocab)
        } else {
            None
        };
        if config.precision == Precision::F32 {
            params.round_to_f32();
        }
        let samples = prepare(samples, &bpe, &model, config.frame_cap)?;
        Ok(Self {
            config,
            model,
            params,
            optimizer: AdamWState::default(),
            bpe,
            anchors,
            step: 0,
            epoch: 0,
            telemetry: Vec::new(),
            samples,
            pool: thread_pool()?,
            sink: None,
        })
    }

    /// Continues from a checkpoint with its tokenizer, anchors, parameters
    /// and optimizer state. `epochs` overrides the configured total.
    pub fn resume(ckpt: Checkpoint, samples: Vec<Sample>, epochs: Option<usize>) -> Result<Self> {
        let mut config = ckpt.config;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        config.validate()?;
        let samples = prepare(samples, &ckpt.bpe, &ckpt.model, config.frame_cap)?;
        Ok(Self {
            config,
            model: ckpt.model,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            bpe: ckpt.bpe,
            anchors: ckpt.anchors,
            step: ckpt.step,
            epoch: ckpt.epoch,
            telemetry: Vec::new(),
            samples,
            pool: thread_pool()?,
            sink: None,
        })
    }

    /// Appends telemetry lines to `path`.
    pub fn log_to(&mut self, path: &Path) -> Result<()> {
        let f = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.sink = Some(BufWriter::new(f));
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().map(|p| &p.sample)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.steps_per_epoch()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            step: self.step,
            epoch: self.epoch,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            bpe: self.bpe.clone(),
            anchors: self.anchors.clone(),
        }
    }

    fn trainable(&self) -> fn(&str) -> bool {
        if self.config.e2e {
            is_trainable_all
        } else {
            is_trainable_frozen_backbone
        }
    }

    /// Sample order of `epoch` (0-based).
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, &[rng::label("shuffle"), epoch as u64]));
        order
    }

    /// Runs the remaining epochs, saving a checkpoint to `ckpt_dir` after
    /// each one.
    pub fn train(&mut self, ckpt_dir: Option<&Path>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch()?;
            if let Some(dir) = ckpt_dir {
                self.checkpoint().save(dir)?;
            }
        }
        Ok(())
    }

    pub fn train_epoch(&mut self) -> Result<()> {
        let order = self.epoch_order(self.epoch);
        for batch in order.chunks(self.config.batch_size) {
            self.train_step(batch)?;
        }
        self.epoch += 1;
        if let Some(s) = &mut self.sink {
            s.flush().map_err(|e| Error::io("telemetry", e))?;
        }
        Ok(())
    }

    fn forward_sample(&self, index: usize, step: u64, train: bool) -> Result<Forward> {
        let prepared = &self.samples[index];
        let tape = Tape::new();
        let trainable = if train { self.trainable() } else { |_: &str| false };
        let p = self.params.bind(&tape, trainable);
        let drop = if train {
            let g = rng::stream(self.config.seed, &[rng::label("dropout"), step, index as u64]);
            Dropout::train(self.model.decoder.dropout, g)
        } else {
            Dropout::eval()
        };
        let (f_enc, ce, count) = self.sample_loss(&p, prepared, &drop)?;
        let vars = p.into_vars();
        Ok(Forward {
            tape,
            vars,
            f_enc,
            ce,
            count,
        })
    }

    fn sample_loss(&self, p: &Bound, prepared: &Prepared, drop: &Dropout) -> Result<(Var, Var, usize)> {
        let feats = backbone_forward(p, &prepared.sample.pose, &self.model.backbone)?;
        let len = p.tape.shape(feats)[0];
        let valid = vec![true; len];
        let f_enc = encode(p, feats, &valid, &self.model, drop)?;
        let out = decode_teacher_forced(p, f_enc, &valid, &prepared.ids, &self.model, drop)?;
        let (ce, count) = translation_loss_sum(p, out.logits, &prepared.ids)?;
        Ok((f_enc, ce, count))
    }

    fn triplet_draw(&self, batch: &[usize], step: u64) -> Option<(crate::ccm::BatchAnchorSet, TripletDraw)> {
        let vocab = self.anchors.as_ref().filter(|_| self.config.ccm)?;
        let texts: Vec<&str> = batch.iter().map(|&i| self.samples[i].sample.text.as_str()).collect();
        let set = collect_batch_anchors(&texts, vocab);
        let draw = sample_triplets(&set, &mut rng::stream(self.config.seed, &[rng::label("triplets"), step]));
        Some((set, draw))
    }

    /// One optimizer step on the samples at `batch`.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<StepRecord> {
        let step = self.step + 1;
        let lr = lr_schedule(step as usize, self.config.learning_rate, self.config.warmup_steps, self.total_steps());
        let lambda = self.config.lambda;

        let this = &*self;
        let forwards: Vec<Forward> = this.pool.install(|| {
            batch
                .par_iter()
                .map(|&i| this.forward_sample(i, step, true))
                .collect::<Result<_>>()
        })?;
        let total: usize = forwards.iter().map(|f| f.count).sum();
        if total == 0 {
            return Err(Error::InvalidInput("batch has no target tokens".into()));
        }
        let l_ce = forwards.iter().map(|f| f.tape.item(f.ce)).sum::<f64>() / total as f64;

        let mut l_itl = 0.0;
        let mut draw = TripletDraw::default();
        let mut enc_grads: Vec<Option<Array>> = vec![None; forwards.len()];
        let mut grads: BTreeMap<String, Array> = BTreeMap::new();
        if let Some((set, d)) = this.triplet_draw(batch, step) {
            draw = d;
            if !draw.triplets.is_empty() {
                let tape = Tape::new();
                let p = this.params.bind(&tape, |n| n.starts_with(CCM_PREFIX));
                let leaves: Vec<Var> = forwards.iter().map(|f| tape.leaf(f.tape.value(f.f_enc), true)).collect();
                let masks: Vec<Vec<bool>> = leaves.iter().map(|&v| vec![true; tape.shape(v)[0]]).collect();
                let encoded: Vec<(Var, &[bool])> = leaves.iter().zip(&masks).map(|(&v, m)| (v, m.as_slice())).collect();
                let query = anchor_query(&p, &set, &encoded, &this.config.ccm_config())?;
                let itl = triplet_loss(&tape, query.as_ref(), &draw.triplets, this.config.mu, this.config.hinge)?;
                l_itl = tape.item(itl.loss);
                if lambda > 0.0 {
                    tape.backward_seeded(&[(itl.loss, Array::scalar(lambda))])?;
                    for (slot, &leaf) in enc_grads.iter_mut().zip(&leaves) {
                        *slot = tape.grad(leaf);
                    }
                    grads.extend(p.grads());
                }
            }
        }
        let loss = l_ce + lambda * l_itl;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: step as usize,
                what: "loss".into(),
            });
        }

        let trainable = this.trainable();
        let inv_total = 1.0 / total as f64;
        let per_sample: Vec<BTreeMap<String, Array>> = this.pool.install(|| {
            forwards
                .into_par_iter()
                .zip(enc_grads)
                .map(|(f, df)| {
                    let mut seeds = vec![(f.ce, Array::scalar(inv_total))];
                    if let Some(df) = df {
                        seeds.push((f.f_enc, df));
                    }
                    f.tape.backward_seeded(&seeds)?;
                    Ok(f.vars
                        .iter()
                        .filter(|(n, _)| trainable(n))
                        .filter_map(|(n, &v)| f.tape.grad(v).map(|g| (n.clone(), g)))
                        .collect())
                })
                .collect::<Result<_>>()
        })?;
        for g in per_sample {
            for (name, value) in g {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(value.data()).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name, value);
                    }
                }
            }
        }

        let grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step: step as usize,
                what: "gradient norm".into(),
            });
        }
        AdamW::new(self.config.weight_decay).step(&mut self.params, &grads, &mut self.optimizer, lr)?;
        if self.config.precision == Precision::F32 {
            self.params.round_to_f32();
            self.optimizer.round_to_f32();
        }
        self.step = step;
        let record = StepRecord {
            step,
            epoch: self.epoch,
            lr,
            l_ce,
            l_itl,
            loss,
            triplets: draw.triplets.len(),
            skipped: draw.skipped,
            grad_norm,
        };
        if let Some(s) = &mut self.sink {
            let line = serde_json::to_string(&record)?;
            writeln!(s, "{line}").map_err(|e| Error::io("telemetry", e))?;
        }
        self.telemetry.push(record.clone());
        Ok(record)
    }

    /// Mean teacher-forced cross-entropy over the training set, without
    /// dropout.
    pub fn eval_loss(&self) -> Result<f64> {
        let parts: Vec<(f64, usize)> = self.pool.install(|| {
            (0..self.samples.len())
                .into_par_iter()
                .map(|i| {
                    let f = self.forward_sample(i, 0, false)?;
                    Ok((f.tape.item(f.ce), f.count))
                })
                .collect::<Result<_>>()
        })?;
        let (sum, count) = parts.iter().fold((0.0, 0), |(s, c), &(x, n)| (s + x, c + n));
        Ok(sum / count as f64)
    }

    /// Anchor similarity statistics over the training set in batches of the
    /// configured size, natural order, no dropout, triplets drawn from
    /// `probe_seed`.
    pub fn ccm_probe(&self, probe_seed: u64) -> Result<Option<CcmProbe>> {
        let Some(vocab) = &self.anchors else { return Ok(None) };
        let (mut pos, mut neg, mut itl, mut batches, mut count) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let order: Vec<usize> = (0..self.samples.len()).collect();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let forwards: Vec<Forward> = self.pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| self.forward_sample(i, 0, false))
                    .collect::<Result<_>>()
            })?;
            let texts: Vec<&str> = batch.iter().map(|&i| self.samples[i].sample.text.as_str()).collect();
            let set = collect_batch_anchors(&texts, vocab);
            let draw = sample_triplets(&set, &mut rng::stream(probe_seed, &[rng::label("probe"), b as u64]));
            if draw.triplets.is_empty() {
                continue;
            }
            let tape = Tape::new();
            let p = self.params.bind(&tape, |_| false);
            let leaves: Vec<Var> = forwards.iter().map(|f| tape.constant(f.tape.value(f.f_enc))).collect();
            let masks: Vec<Vec<bool>> = leaves.iter().map(|&v| vec![true; tape.shape(v)[0]]).collect();
            let encoded: Vec<(Var, &[bool])> = leaves.iter().zip(&masks).map(|(&v, m)| (v, m.as_slice())).collect();
            let query = anchor_query(&p, &set, &encoded, &self.config.ccm_config())?;
            let loss = triplet_loss(&tape, query.as_ref(), &draw.triplets, self.config.mu, self.config.hinge)?;
            pos += loss.pos_sims.iter().sum::<f64>();
            neg += loss.neg_sims.iter().sum::<f64>();
            count += loss.pos_sims.len();
            itl += tape.item(loss.loss);
            batches += 1;
        }
        if count == 0 {
            return Ok(None);
        }
        Ok(Some(CcmProbe {
            pos_sim: pos / count as f64,
            neg_sim: neg / count as f64,
            l_itl: itl / batches as f64,
            triplets: count,
        }))
    }
}
