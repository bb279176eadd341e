use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use signbridge::anchors::{read_plain_corpus, read_tagged_corpus, select_anchors, AnchorFilter, AnchorVocab, Lexicon, WordType};
use signbridge::bpe::BpeModel;
use signbridge::ccm::HingePlacement;
use signbridge::pipeline::{
    ablation_grid, diagnostics, evaluate_manifest, generate_synthetic, load_dataset, loss_weight_grid, run_grid,
    Checkpoint, DatasetManifest, Precision, SyntheticSpec, TrainConfig, Trainer, Translator, DEFAULT_LAMBDAS,
};
use signbridge::pose::read_pose_file;

/// Gloss-free sign language translation from pose keypoints.
///
/// Worker threads follow SLT_THREADS (default: all cores); results do not
/// depend on it.
#[derive(Parser)]
#[command(name = "signbridge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine conceptual anchor words from a text corpus.
    PrepareAnchors(PrepareAnchors),
    /// Train a BPE tokenizer on translations.
    TrainBpe(TrainBpe),
    /// Write a synthetic pose/translation dataset.
    GenSynthetic(GenSynthetic),
    /// Train a model and write a checkpoint after every epoch.
    Train(Train),
    /// Translate pose files with a checkpoint.
    Translate(Translate),
    /// Translate a manifest and score against its translations.
    Evaluate(Evaluate),
    /// Finite-difference check of every operation and loss.
    Gradcheck(Gradcheck),
    /// Train a grid of λ/μ values or the eight ablation combinations.
    Sweep(Sweep),
}

#[derive(Args)]
struct PrepareAnchors {
    /// One sentence per line, or `word<TAB>TAG` lines with `--tagged`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tagged: bool,
    #[arg(long, default_value = "VN")]
    anchor_preset: WordType,
    #[arg(long)]
    anchor_min_count: Option<usize>,
    #[arg(long)]
    anchor_max_doc_fraction: Option<f64>,
    /// `word<TAB>TAG` lexicon replacing the built-in one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainBpe {
    /// One sentence per line.
    #[arg(long, conflicts_with = "manifest")]
    corpus: Option<PathBuf>,
    /// Take the translations of a dataset manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = signbridge::bpe::DEFAULT_VOCAB_SIZE)]
    bpe_vocab_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenSynthetic {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    concepts: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 8)]
    frames_per_concept: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Overrides applied on top of the defaults or a `--config` file.
#[derive(Args, Clone)]
struct TrainFlags {
    /// TrainConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from desk-scale model dimensions of this width.
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long, requires = "d_model")]
    layers: Option<usize>,
    #[arg(long, requires = "d_model")]
    heads: Option<usize>,
    /// Channel width of the pose backbone.
    #[arg(long)]
    backbone_hidden: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    frame_cap: Option<usize>,
    #[arg(long)]
    anchor_preset: Option<WordType>,
    #[arg(long)]
    anchor_min_count: Option<usize>,
    #[arg(long)]
    anchor_max_doc_fraction: Option<f64>,
    #[arg(long)]
    bpe_vocab_size: Option<usize>,
    #[arg(long)]
    e2e: Option<bool>,
    #[arg(long)]
    pe: Option<bool>,
    #[arg(long)]
    ccm: Option<bool>,
    /// `over-mean` or `per-triplet`.
    #[arg(long, value_parser = parse_hinge)]
    hinge: Option<HingePlacement>,
    /// `f32` or `f64`.
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_decode_len: Option<usize>,
    /// Pretrained word vectors, `word v1 … vd` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_hinge(s: &str) -> Result<HingePlacement, String> {
    match s {
        "over-mean" | "over_mean" => Ok(HingePlacement::OverMean),
        "per-triplet" | "per_triplet" => Ok(HingePlacement::PerTriplet),
        _ => Err(format!("unknown hinge placement {s:?}")),
    }
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision {s:?}")),
    }
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(d) = self.d_model {
            let small = TrainConfig::small(d, self.layers.unwrap_or(2), self.heads.unwrap_or(2));
            c.model = small.model;
            c.d_ca = small.d_ca;
            c.ccm_heads = small.ccm_heads;
            c.ccm_hidden = small.ccm_hidden;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$field = v; })*
            };
        }
        set!(
            learning_rate, warmup_steps, epochs, batch_size, lambda, mu, frame_cap, anchor_preset, anchor_min_count,
            anchor_max_doc_fraction, bpe_vocab_size, e2e, pe, ccm, hinge, precision, weight_decay, grad_clip,
            beam_size, max_decode_len, seed
        );
        if let Some(h) = self.backbone_hidden {
            c.model.backbone.hidden = h;
        }
        if self.embeddings.is_some() {
            c.embeddings = self.embeddings.clone();
        }
        if self.lexicon.is_some() {
            c.lexicon = self.lexicon.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint directory, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Prepared tokenizer; trained on the manifest when omitted.
    #[arg(long)]
    bpe: Option<PathBuf>,
    /// Prepared anchors; mined from the manifest when omitted.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Continue from this checkpoint; `--epochs` sets the new total.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// JSON-lines telemetry, one record per step. Defaults to
    /// `OUT.telemetry.jsonl`.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct Translate {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL or PSEQ pose files.
    #[arg(required = true)]
    poses: Vec<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_decode_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for `report.json` and `hypotheses.tsv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_decode_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Gradcheck {
    /// Coordinates sampled per input of the composite losses.
    #[arg(long, default_value_t = 24)]
    coords: usize,
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Sweep {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Comma-separated μ values; defaults to the configured μ.
    #[arg(long, value_delimiter = ',')]
    mus: Option<Vec<f64>>,
    /// Run the eight e2e/pe/ccm combinations instead of a λ/μ grid.
    #[arg(long, conflicts_with_all = ["lambdas", "mus"])]
    ablation: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn prepare_anchors(a: PrepareAnchors) -> Result<()> {
    let text = read_text(&a.corpus)?;
    let corpus = if a.tagged {
        read_tagged_corpus(&text, &a.corpus.display().to_string())?
    } else {
        let lexicon = match &a.lexicon {
            Some(p) => Lexicon::from_file(p)?,
            None => Lexicon::builtin(),
        };
        read_plain_corpus(&text, &lexicon)
    };
    let mut filter = AnchorFilter::preset(a.anchor_preset);
    if let Some(m) = a.anchor_min_count {
        filter.min_count = m;
    }
    if let Some(f) = a.anchor_max_doc_fraction {
        filter.max_doc_fraction = f;
    }
    let vocab = select_anchors(&corpus, &filter);
    vocab.save(&a.out)?;
    println!("{} anchors from {} sentences -> {}", vocab.len(), corpus.len(), a.out.display());
    Ok(())
}

fn train_bpe(a: TrainBpe) -> Result<()> {
    let lines: Vec<String> = match (&a.corpus, &a.manifest) {
        (Some(p), None) => read_text(p)?.lines().map(str::to_string).collect(),
        (None, Some(m)) => DatasetManifest::load(m)?.samples.into_iter().map(|s| s.text).collect(),
        _ => bail!("give exactly one of --corpus or --manifest"),
    };
    let model = BpeModel::train(&lines, a.bpe_vocab_size)?;
    model.save(&a.out)?;
    println!("{} merges, vocabulary {} -> {}", model.merges().len(), model.vocab_size(), a.out.display());
    Ok(())
}

fn gen_synthetic(a: GenSynthetic) -> Result<()> {
    let spec = SyntheticSpec {
        concepts: a.concepts,
        min_len: a.min_len,
        max_len: a.max_len,
        frames_per_concept: a.frames_per_concept,
        noise: a.noise,
        words: Vec::new(),
    };
    let manifest = generate_synthetic(&spec, a.count, a.seed, &a.out)?;
    println!("{} samples -> {}", manifest.samples.len(), a.out.join("manifest.json").display());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let config = a.flags.resolve()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let samples = load_dataset(&manifest, config.frame_cap)?;
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::resume(Checkpoint::load(dir)?, samples, a.flags.epochs)?,
        None => {
            let bpe = a.bpe.as_deref().map(BpeModel::load).transpose()?;
            let anchors = a.anchors.as_deref().map(AnchorVocab::load).transpose()?;
            Trainer::with_resources(config, samples, bpe, anchors)?
        }
    };
    let telemetry = a
        .telemetry
        .unwrap_or_else(|| PathBuf::from(format!("{}.telemetry.jsonl", a.out.display())));
    trainer.log_to(&telemetry)?;
    eprintln!(
        "{} samples, {} parameters, {} steps per epoch",
        trainer.num_samples(),
        trainer.params.num_elements(),
        trainer.steps_per_epoch()
    );
    while trainer.epoch < trainer.config.epochs {
        trainer.train_epoch()?;
        trainer.checkpoint().save(&a.out)?;
        if let Some(r) = trainer.telemetry.last() {
            eprintln!(
                "epoch {} step {} l_ce {:.4} l_itl {:.4} lr {:.2e}",
                trainer.epoch, r.step, r.l_ce, r.l_itl, r.lr
            );
        }
    }
    Ok(())
}

fn translator(dir: &Path, beam: Option<usize>, max_len: Option<usize>) -> Result<Translator> {
    let mut t = Translator::load(dir)?;
    if let Some(b) = beam {
        t.beam.beam_size = b;
    }
    if let Some(m) = max_len {
        t.beam.max_len = m.min(t.model.decoder.max_positions - 1);
    }
    Ok(t)
}

fn translate(a: Translate) -> Result<()> {
    let t = translator(&a.checkpoint, a.beam_size, a.max_decode_len)?;
    for path in &a.poses {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let seq = read_pose_file(path, &id)?;
        println!("{id}\t{}", t.translate(&seq)?);
    }
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    let t = translator(&a.checkpoint, a.beam_size, a.max_decode_len)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (report, _) = evaluate_manifest(&t, &manifest, a.out.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn gradcheck(a: Gradcheck) -> Result<bool> {
    let suite = diagnostics::run_gradcheck_suite(a.seed, a.coords)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&suite)?);
    } else {
        for r in &suite.rows {
            let status = if r.passed() { "ok" } else { "FAIL" };
            println!("{:<32} {:>10.3e} < {:.0e}  {status}", r.name, r.max_rel_error, r.tolerance);
        }
        println!("{} checks in {:.2}s", suite.rows.len(), suite.seconds);
    }
    Ok(suite.passed())
}

fn sweep(a: Sweep) -> Result<()> {
    let base = a.flags.resolve()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let samples = load_dataset(&manifest, base.frame_cap)?;
    let runs = if a.ablation {
        ablation_grid(&base)
    } else {
        let lambdas = a.lambdas.unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
        let mus = a.mus.unwrap_or_else(|| vec![base.mu]);
        loss_weight_grid(&base, &lambdas, &mus)
    };
    let summaries = run_grid(runs, &samples, Some(&a.out))?;
    for s in &summaries {
        println!(
            "{:<28} l_ce {:.4} -> {:.4}  l_itl {:.4}",
            s.name, s.first_l_ce, s.final_l_ce, s.final_l_itl
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PrepareAnchors(a) => prepare_anchors(a).map(|_| true),
        Command::TrainBpe(a) => train_bpe(a).map(|_| true),
        Command::GenSynthetic(a) => gen_synthetic(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Translate(a) => translate(a).map(|_| true),
        Command::Evaluate(a) => evaluate(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Sweep(a) => sweep(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
