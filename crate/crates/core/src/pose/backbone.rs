use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{normalize_pose, PoseSequence, SkeletonSpec, NUM_CHANNELS, NUM_KEYPOINTS};
use crate::params::{Bound, Init, ParamStore};
use crate::tensor::{Array, Var};
use crate::Result;

pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Channel width of every graph and temporal block.
    pub hidden: usize,
    pub d_visual: usize,
    pub skeleton: SkeletonSpec,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            d_visual: 1024,
            skeleton: SkeletonSpec::default(),
        }
    }
}

/// Per-step visual features, `ceil(T/4) × d_visual`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneOutput {
    pub features: Array,
}

struct Graph {
    adj: Arc<Array>,
    regions: Arc<Vec<Vec<usize>>>,
}

impl BackboneConfig {
    fn graph(&self) -> Graph {
        Graph {
            adj: Arc::new(self.skeleton.normalized_adjacency()),
            regions: Arc::new(self.skeleton.region_sets()),
        }
    }

    /// Output length for an input of `t` frames.
    pub fn output_len(t: usize) -> usize {
        t.div_ceil(2).div_ceil(2)
    }
}

const GCN_LAYERS: usize = 3;
const TCN_LAYERS: usize = 2;

pub fn init_backbone(store: &mut ParamStore, cfg: &BackboneConfig, seed: u64) {
    let h = cfg.hidden;
    for i in 0..GCN_LAYERS {
        let cin = if i == 0 { NUM_CHANNELS } else { h };
        let name = format!("{BACKBONE_PREFIX}gcn{i}");
        store.init(seed, &format!("{name}.refine"), &[cin, NUM_KEYPOINTS, NUM_KEYPOINTS], Init::Zeros);
        store.init_linear(seed, &name, cin, h);
    }
    for i in 0..TCN_LAYERS {
        let name = format!("{BACKBONE_PREFIX}tcn{i}");
        for k in [3, 5] {
            let bound = (6.0 / ((k + 1) * h) as f64).sqrt();
            store.init(seed, &format!("{name}.k{k}"), &[k, h, h], Init::Uniform(bound));
        }
        store.init(seed, &format!("{name}.b"), &[h], Init::Zeros);
    }
    let regions = cfg.skeleton.regions.len();
    store.init_linear(seed, &format!("{BACKBONE_PREFIX}pool"), regions * h, cfg.d_visual);
}

/// Graph convolution with the refined adjacency, then a pointwise
/// projection and relu. `T×76×C → T×76×C′`.
pub fn gcn_block(p: &Bound, x: Var, adj: Arc<Array>, name: &str) -> Result<Var> {
    let t = p.tape;
    let shape = t.shape(x);
    let (frames, nodes, c) = (shape[0], shape[1], shape[2]);
    let mixed = t.graph_conv(x, adj, p.get(&format!("{name}.refine"))?)?;
    let flat = t.reshape(mixed, &[frames * nodes, c])?;
    let y = t.relu(p.linear(flat, name)?);
    let cout = t.shape(y)[1];
    Ok(t.reshape(y, &[frames, nodes, cout])?)
}

/// Kernel-3 and kernel-5 temporal convolutions at stride 2, summed, biased
/// and rectified. `T×76×C → ceil(T/2)×76×C`.
pub fn tcn_block(p: &Bound, x: Var, name: &str) -> Result<Var> {
    let t = p.tape;
    let a = t.temporal_conv(x, p.get(&format!("{name}.k3"))?, 2)?;
    let b = t.temporal_conv(x, p.get(&format!("{name}.k5"))?, 2)?;
    let s = t.add(a, b)?;
    let s = t.add_bias(s, p.get(&format!("{name}.b"))?)?;
    Ok(t.relu(s))
}

/// Region means concatenated and projected: `T′×76×C → T′×d_visual`.
pub fn region_pool(p: &Bound, x: Var, regions: Arc<Vec<Vec<usize>>>, name: &str) -> Result<Var> {
    let pooled = p.tape.region_mean(x, regions)?;
    p.linear(pooled, name)
}

/// normalize → gcn → gcn → tcn → gcn → tcn → region pool.
pub fn backbone_forward(p: &Bound, seq: &PoseSequence, cfg: &BackboneConfig) -> Result<Var> {
    let graph = cfg.graph();
    let norm = normalize_pose(seq, &cfg.skeleton);
    let mut x = p.tape.constant(norm.frames().clone());
    let n = |s: &str| format!("{BACKBONE_PREFIX}{s}");
    x = gcn_block(p, x, graph.adj.clone(), &n("gcn0"))?;
    x = gcn_block(p, x, graph.adj.clone(), &n("gcn1"))?;
    x = tcn_block(p, x, &n("tcn0"))?;
    x = gcn_block(p, x, graph.adj.clone(), &n("gcn2"))?;
    x = tcn_block(p, x, &n("tcn1"))?;
    region_pool(p, x, graph.regions, &n("pool"))
}

impl BackboneOutput {
    /// Runs the backbone outside of training.
    pub fn compute(store: &ParamStore, seq: &PoseSequence, cfg: &BackboneConfig) -> Result<Self> {
        let tape = crate::tensor::Tape::new();
        let p = store.bind(&tape, |_| false);
        let v = backbone_forward(&p, seq, cfg)?;
        Ok(Self {
            features: (*tape.value(v)).clone(),
        })
    }
}
