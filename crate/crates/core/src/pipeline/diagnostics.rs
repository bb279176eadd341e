//! Finite-difference checks of every differentiable operation and of the
//! composed training objectives.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::EmbeddingInit;
use crate::ccm::{anchor_query, combined_loss, init_ccm, triplet_loss, BatchAnchorSet, CcmConfig, HingePlacement, Triplet, ANCHOR_TABLE};
use crate::model::{decode_teacher_forced, encode, init_model, multi_head_attention, translation_loss, Dropout, ModelConfig, TOKEN_EMBED};
use crate::params::{Bound, ParamStore};
use crate::pose::{backbone_forward, PoseSequence, NUM_CHANNELS, NUM_KEYPOINTS};
use crate::rng;
use crate::tensor::{Array, GradCheck, Reduction, Tape, Var};
use crate::Result;

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for composed losses.
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSuite {
    pub rows: Vec<GradCheckRow>,
    pub seconds: f64,
}

impl GradCheckSuite {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradCheckRow::passed)
    }
}

fn random(shape: &[usize], seed: u64, tag: &str) -> Array {
    let mut g = rng::stream(seed, &[rng::label("gradcheck"), rng::label(tag)]);
    Array::from_fn(shape, |_| g.random_range(-1.0..1.0))
}

/// Entries bounded away from zero, so kinks sit outside the stencil.
fn away_from_zero(shape: &[usize], seed: u64, tag: &str) -> Array {
    random(shape, seed, tag).map(|x| if x.abs() < 0.05 { x.signum() * 0.05 + x } else { x })
}

/// Contracts to a scalar with fixed uneven weights.
fn weighted_sum(t: &Tape, x: Var) -> Result<Var> {
    let w = t.constant(Array::from_fn(&t.shape(x), |i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4));
    Ok(t.sum(t.mul(x, w)?))
}

struct Runner {
    rows: Vec<GradCheckRow>,
    check: GradCheck,
}

impl Runner {
    fn run<F>(&mut self, name: &str, tolerance: f64, inputs: &[Array], f: F) -> Result<()>
    where
        F: Fn(&Tape, &[Var]) -> Result<Var>,
    {
        let report = self.check.run(f, inputs)?;
        self.rows.push(GradCheckRow {
            name: name.to_string(),
            max_rel_error: report.max_rel_error,
            tolerance,
            coords_checked: report.coords_checked,
        });
        Ok(())
    }
}

fn toy_pose(frames: usize, seed: u64) -> Result<PoseSequence> {
    let mut g = rng::stream(seed, &[rng::label("gradcheck_pose")]);
    let data = (0..frames * NUM_KEYPOINTS * NUM_CHANNELS)
        .map(|i| if i % NUM_CHANNELS == 2 { 1.0 } else { g.random_range(-1.0..1.0) })
        .collect();
    PoseSequence::from_frames(data, "gradcheck")
}

fn toy_model(seed: u64) -> Result<(ModelConfig, ParamStore)> {
    let mut cfg = ModelConfig::small(8, 1, 2, 12);
    cfg.backbone.hidden = 4;
    let mut store = init_model(&cfg, seed)?;
    let ccm = toy_ccm();
    let init = EmbeddingInit {
        matrix: random(&[5, ccm.d_ca], seed, "anchors"),
        d_ca: ccm.d_ca,
        oov_mask: vec![false; 5],
    };
    init_ccm(&mut store, &ccm, cfg.backbone.d_visual, &init, seed)?;
    Ok((cfg, store))
}

fn toy_ccm() -> CcmConfig {
    CcmConfig {
        heads: 2,
        hidden: 3,
        d_ca: 6,
        ..CcmConfig::default()
    }
}

fn toy_batch() -> BatchAnchorSet {
    BatchAnchorSet {
        anchors: vec![0, 2, 4],
        membership: vec![BTreeSet::from([0]), BTreeSet::from([1]), BTreeSet::from([0, 1])],
        num_samples: 2,
    }
}

/// Binds `store` with `names` mapped to the checked inputs.
fn pin<'a>(store: &'a ParamStore, t: &'a Tape, v: &[Var], names: &[&str]) -> Bound<'a> {
    let p = store.bind(t, |_| false);
    for (n, &x) in names.iter().zip(v) {
        p.pin(n, x);
    }
    p
}

const TOY_TRIPLETS: [Triplet; 2] = [Triplet { m: 0, pos: 0, neg: 1 }, Triplet { m: 1, pos: 1, neg: 0 }];

/// Runs the full suite in f64. `sampled` caps the coordinates checked per
/// input of the composite objectives.
pub fn run_gradcheck_suite(seed: u64, sampled: usize) -> Result<GradCheckSuite> {
    let start = Instant::now();
    let mut r = Runner {
        rows: Vec::new(),
        check: GradCheck::default(),
    };
    let a = |s: &[usize], tag: &str| random(s, seed, tag);

    r.run("matmul", OP_TOLERANCE, &[a(&[3, 4], "a"), a(&[4, 2], "b")], |t, v| weighted_sum(t, t.matmul(v[0], v[1])?))?;
    r.run("add", OP_TOLERANCE, &[a(&[2, 3], "a"), a(&[2, 3], "b")], |t, v| weighted_sum(t, t.add(v[0], v[1])?))?;
    r.run("sub", OP_TOLERANCE, &[a(&[2, 3], "a"), a(&[2, 3], "b")], |t, v| weighted_sum(t, t.sub(v[0], v[1])?))?;
    r.run("mul", OP_TOLERANCE, &[a(&[2, 3], "a"), a(&[2, 3], "b")], |t, v| weighted_sum(t, t.mul(v[0], v[1])?))?;
    r.run("add_bias", OP_TOLERANCE, &[a(&[3, 4], "a"), a(&[4], "b")], |t, v| weighted_sum(t, t.add_bias(v[0], v[1])?))?;
    r.run("scale", OP_TOLERANCE, &[a(&[5], "a")], |t, v| weighted_sum(t, t.scale(v[0], -1.7)))?;
    r.run("concat", OP_TOLERANCE, &[a(&[2, 3], "a"), a(&[2, 2], "b")], |t, v| weighted_sum(t, t.concat(&[v[0], v[1]], 1)?))?;
    r.run("narrow", OP_TOLERANCE, &[a(&[4, 5], "a")], |t, v| weighted_sum(t, t.narrow(v[0], 1, 1, 3)?))?;
    r.run("transpose", OP_TOLERANCE, &[a(&[3, 4], "a")], |t, v| weighted_sum(t, t.transpose(v[0])?))?;
    r.run("reshape", OP_TOLERANCE, &[a(&[3, 4], "a")], |t, v| weighted_sum(t, t.reshape(v[0], &[2, 6])?))?;
    r.run("mean", OP_TOLERANCE, &[a(&[3, 4], "a")], |t, v| weighted_sum(t, t.mean(v[0], 0)?))?;
    r.run("sum", OP_TOLERANCE, &[a(&[3, 4], "a")], |t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.sum(y))
    })?;
    r.run("relu", OP_TOLERANCE, &[away_from_zero(&[12], seed, "relu")], |t, v| weighted_sum(t, t.relu(v[0])))?;
    r.run("gelu", OP_TOLERANCE, &[a(&[12], "a")], |t, v| weighted_sum(t, t.gelu(v[0])))?;
    r.run("softmax", OP_TOLERANCE, &[a(&[3, 5], "a")], |t, v| weighted_sum(t, t.softmax(v[0], 1)?))?;
    r.run("layer_norm", OP_TOLERANCE, &[a(&[3, 6], "a"), a(&[6], "g"), a(&[6], "b")], |t, v| {
        weighted_sum(t, t.layer_norm(v[0], v[1], v[2], 1e-5)?)
    })?;
    r.run("dropout", OP_TOLERANCE, &[a(&[4, 5], "a")], |t, v| {
        let mut g = rng::stream(seed, &[rng::label("gradcheck_dropout")]);
        weighted_sum(t, t.dropout(v[0], 0.3, true, &mut g)?)
    })?;
    r.run("embedding", OP_TOLERANCE, &[a(&[5, 3], "a")], |t, v| weighted_sum(t, t.embedding(v[0], &[4, 0, 4, 2])?))?;
    r.run("cosine_similarity", OP_TOLERANCE, &[a(&[1, 6], "a"), a(&[1, 6], "b")], |t, v| {
        Ok(t.cosine_similarity(v[0], v[1], 1e-8)?)
    })?;
    r.run("cross_entropy", OP_TOLERANCE, &[a(&[4, 6], "a")], |t, v| {
        Ok(t.cross_entropy(v[0], &[1, 0, 5, 3], 0, Reduction::Mean)?.0)
    })?;
    let adj = Arc::new(a(&[5, 5], "adj"));
    r.run("graph_conv", OP_TOLERANCE, &[a(&[3, 5, 2], "x"), a(&[2, 5, 5], "r")], |t, v| {
        weighted_sum(t, t.graph_conv(v[0], adj.clone(), v[1])?)
    })?;
    r.run("temporal_conv", OP_TOLERANCE, &[a(&[5, 2, 3], "x"), a(&[3, 3, 3], "w")], |t, v| {
        weighted_sum(t, t.temporal_conv(v[0], v[1], 2)?)
    })?;
    let regions = Arc::new(vec![vec![0, 1], vec![2, 3, 4]]);
    r.run("region_mean", OP_TOLERANCE, &[a(&[2, 5, 3], "x")], |t, v| {
        weighted_sum(t, t.region_mean(v[0], regions.clone())?)
    })?;
    for (name, x) in [("hinge_active", 0.37), ("hinge_inactive", -0.37)] {
        r.run(name, OP_TOLERANCE, &[Array::scalar(x)], |t, v| {
            let y = t.hinge(v[0])?;
            Ok(t.scale(y, 1.3))
        })?;
    }

    let (cfg, store) = toy_model(seed)?;
    r.run("multi_head_attention", OP_TOLERANCE, &[a(&[3, 8], "q"), a(&[4, 8], "kv")], |t, v| {
        let p = store.bind(t, |_| false);
        let mask = crate::model::attention_mask(3, &[true, true, true, false], false);
        weighted_sum(t, multi_head_attention(&p, v[0], v[1], "enc.l0.attn", 2, mask.as_ref())?)
    })?;

    let pose = toy_pose(6, seed)?;
    let ids = [1, 5, 7, 4, 2];
    let translation_names = [TOKEN_EMBED, "enc.l0.attn.q.w", "backbone.pool.w"];
    let param = |n: &str| (**store.get(n).expect("toy parameter")).clone();
    r.check = GradCheck::sampled(sampled, seed);
    r.run(
        "translation_loss",
        COMPOSITE_TOLERANCE,
        &translation_names.map(param),
        |t, v| {
            let p = pin(&store, t, v, &translation_names);
            let feats = backbone_forward(&p, &pose, &cfg.backbone)?;
            let valid = vec![true; t.shape(feats)[0]];
            let f_enc = encode(&p, feats, &valid, &cfg, &Dropout::eval())?;
            let out = decode_teacher_forced(&p, f_enc, &valid, &ids, &cfg, &Dropout::eval())?;
            translation_loss(&p, out.logits, &ids)
        },
    )?;

    let ccm = toy_ccm();
    let batch = toy_batch();
    let ccm_names = [ANCHOR_TABLE, "ccm.w_q", "ccm.w_k"];
    for (name, hinge) in [
        ("triplet_loss_hinge_over_mean", HingePlacement::OverMean),
        ("triplet_loss_hinge_per_triplet", HingePlacement::PerTriplet),
    ] {
        let mut inputs = ccm_names.map(param).to_vec();
        inputs.push(a(&[3, 8], "f0"));
        inputs.push(a(&[4, 8], "f1"));
        r.run(name, COMPOSITE_TOLERANCE, &inputs, |t, v| {
            let p = pin(&store, t, v, &ccm_names);
            let valid0 = [true; 3];
            let valid1 = [true, true, true, false];
            let enc = [(v[3], &valid0[..]), (v[4], &valid1[..])];
            let q = anchor_query(&p, &batch, &enc, &ccm)?;
            Ok(triplet_loss(t, q.as_ref(), &TOY_TRIPLETS, ccm.margin, hinge)?.loss)
        })?;
    }

    let joint_names = [TOKEN_EMBED, "enc.l0.ff1.w", "ccm.w_v", "backbone.pool.w"];
    let poses = [toy_pose(5, seed ^ 1)?, toy_pose(7, seed ^ 2)?];
    let texts: [&[usize]; 2] = [&[1, 5, 7, 2], &[1, 9, 4, 4, 2]];
    r.run("joint_loss", COMPOSITE_TOLERANCE, &joint_names.map(param), |t, v| {
        let p = pin(&store, t, v, &joint_names);
        let mut ce = Vec::new();
        let mut encoded = Vec::new();
        for (pose, ids) in poses.iter().zip(texts) {
            let feats = backbone_forward(&p, pose, &cfg.backbone)?;
            let valid = vec![true; t.shape(feats)[0]];
            let f_enc = encode(&p, feats, &valid, &cfg, &Dropout::eval())?;
            let out = decode_teacher_forced(&p, f_enc, &valid, ids, &cfg, &Dropout::eval())?;
            ce.push(translation_loss(&p, out.logits, ids)?);
            encoded.push((f_enc, valid));
        }
        let l_ce = t.scale(t.add(ce[0], ce[1])?, 0.5);
        let enc: Vec<(Var, &[bool])> = encoded.iter().map(|(v, m)| (*v, m.as_slice())).collect();
        let q = anchor_query(&p, &batch, &enc, &ccm)?;
        let itl = triplet_loss(t, q.as_ref(), &TOY_TRIPLETS, ccm.margin, ccm.hinge)?;
        combined_loss(t, l_ce, itl.loss, 1.0)
    })?;

    Ok(GradCheckSuite {
        rows: r.rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}
