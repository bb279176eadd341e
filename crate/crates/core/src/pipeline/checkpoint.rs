use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamWState;
use crate::anchors::AnchorVocab;
use crate::bpe::BpeModel;
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Array;
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelConfig,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: AdamWState,
    pub bpe: BpeModel,
    pub anchors: Option<AnchorVocab>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct MomentEntry {
    name: String,
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
    moments: Vec<MomentEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    step: u64,
    epoch: usize,
    config: TrainConfig,
    model: ModelConfig,
    params: Vec<TensorEntry>,
    optimizer: OptimizerEntry,
    /// Tags the anchor vocabulary was mined with; the TSV only keeps words and counts.
    #[serde(default)]
    anchor_tags: Vec<String>,
}

fn write_f32(path: &Path, a: &Array) -> Result<()> {
    let mut bytes = Vec::with_capacity(a.len() * 4);
    for &x in a.data() {
        bytes.extend((x as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, shape: &[usize]) -> Result<Array> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::InvalidInput(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            n * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Array::new(shape, data)?)
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    /// Writes into a sibling temporary directory, then swaps it in place of
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = PathBuf::from(format!("{}.tmp", dir.display()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        mkdir(&tmp.join("params"))?;
        mkdir(&tmp.join("optim"))?;
        let mut params = Vec::new();
        for (name, value) in self.params.iter() {
            let file = format!("params/{name}.f32");
            write_f32(&tmp.join(&file), value)?;
            params.push(TensorEntry {
                name: name.clone(),
                shape: value.shape().to_vec(),
                file,
            });
        }
        let mut moments = Vec::new();
        for (name, m) in &self.optimizer.m {
            let v = self
                .optimizer
                .v
                .get(name)
                .ok_or_else(|| Error::InvalidInput(format!("missing second moment for {name}")))?;
            let (mf, vf) = (format!("optim/{name}.m.f32"), format!("optim/{name}.v.f32"));
            write_f32(&tmp.join(&mf), m)?;
            write_f32(&tmp.join(&vf), v)?;
            moments.push(MomentEntry {
                name: name.clone(),
                m: mf,
                v: vf,
            });
        }
        let manifest = Manifest {
            format: FORMAT_VERSION,
            step: self.step,
            epoch: self.epoch,
            config: self.config.clone(),
            model: self.model.clone(),
            params,
            optimizer: OptimizerEntry {
                step: self.optimizer.step,
                moments,
            },
            anchor_tags: self
                .anchors
                .as_ref()
                .map(|a| a.tagset_used.iter().cloned().collect())
                .unwrap_or_default(),
        };
        let path = tmp.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        self.bpe.save(&tmp.join("bpe.json"))?;
        if let Some(a) = &self.anchors {
            a.save(&tmp.join("anchors.tsv"))?;
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint format {}",
                manifest.format
            )));
        }
        let mut params = ParamStore::new();
        let mut shapes = BTreeMap::new();
        for e in &manifest.params {
            params.insert(e.name.clone(), read_f32(&dir.join(&e.file), &e.shape)?);
            shapes.insert(e.name.clone(), e.shape.clone());
        }
        let mut optimizer = AdamWState {
            step: manifest.optimizer.step,
            ..AdamWState::default()
        };
        for e in &manifest.optimizer.moments {
            let shape = shapes
                .get(&e.name)
                .ok_or_else(|| Error::InvalidInput(format!("moments for unknown parameter {}", e.name)))?;
            optimizer.m.insert(e.name.clone(), read_f32(&dir.join(&e.m), shape)?);
            optimizer.v.insert(e.name.clone(), read_f32(&dir.join(&e.v), shape)?);
        }
        let anchors_path = dir.join("anchors.tsv");
        let anchors = if anchors_path.exists() {
            let mut a = AnchorVocab::load(&anchors_path)?;
            a.tagset_used = manifest.anchor_tags.iter().cloned().collect();
            Some(a)
        } else {
            None
        };
        Ok(Self {
            config: manifest.config,
            model: manifest.model,
            step: manifest.step,
            epoch: manifest.epoch,
            params,
            optimizer,
            bpe: BpeModel::load(&dir.join("bpe.json"))?,
            anchors,
        })
    }
}
