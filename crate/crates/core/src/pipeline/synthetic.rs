use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{write_translations, DatasetManifest, ManifestEntry, Sample};
use crate::pose::{write_pseq, PoseSequence, SkeletonSpec, NUM_CHANNELS, NUM_KEYPOINTS};
use crate::rng;
use crate::tensor::Array;
use crate::{Error, Result};

const DEFAULT_WORDS: [&str; 16] = [
    "snow", "rain", "house", "teacher", "water", "book", "eat", "drink", "dog", "tree", "school",
    "friend", "walk", "read", "city", "mother",
];
const AMPLITUDE: f64 = 0.3;

/// Shape of a synthetic corpus: each concept is a short keypoint motion
/// paired with one word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub concepts: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_concept: usize,
    pub noise: f64,
    /// Word for each concept; defaults to common nouns and verbs.
    pub words: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            concepts: 8,
            min_len: 3,
            max_len: 8,
            frames_per_concept: 8,
            noise: 0.01,
            words: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.concepts < 4 {
            return Err(Error::Config("a synthetic vocabulary needs at least 4 concepts".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.frames_per_concept == 0 {
            return Err(Error::Config("invalid sentence length range or frame count".into()));
        }
        if !self.words.is_empty() && self.words.len() < self.concepts {
            return Err(Error::Config(format!(
                "{} words given for {} concepts",
                self.words.len(),
                self.concepts
            )));
        }
        Ok(())
    }

    pub fn word(&self, k: usize) -> String {
        if let Some(w) = self.words.get(k) {
            return w.clone();
        }
        DEFAULT_WORDS
            .get(k)
            .map(|w| w.to_string())
            .unwrap_or_else(|| format!("concept{k}"))
    }

    /// Noise-free frames of concept `k`, `frames_per_concept × 76 × 3`.
    /// The concept animates one region (`k mod regions`) with a circular
    /// motion whose frequency and phase depend on `k`.
    pub fn motif(&self, k: usize) -> Array {
        let skeleton = SkeletonSpec::default();
        let regions = skeleton.region_sets();
        let region = &regions[k % regions.len()];
        let freq = 1.0 + (k / regions.len()) as f64;
        let phase = 0.7 * k as f64;
        let base = rest_pose();
        let f = self.frames_per_concept;
        let mut data = Vec::with_capacity(f * NUM_KEYPOINTS * NUM_CHANNELS);
        for t in 0..f {
            for j in 0..NUM_KEYPOINTS {
                let (mut x, mut y) = base[j];
                if let Some(local) = region.iter().position(|&r| r == j) {
                    let a = TAU * freq * t as f64 / f as f64 + phase + 0.2 * local as f64;
                    x += AMPLITUDE * a.sin();
                    y += AMPLITUDE * a.cos();
                }
                data.extend([x, y, 1.0]);
            }
        }
        Array::new(&[f, NUM_KEYPOINTS, NUM_CHANNELS], data).expect("motif shape")
    }
}

/// A fixed upright pose: shoulders one unit apart, face ring around the
/// nose, hand fans around the wrists.
fn rest_pose() -> Vec<(f64, f64)> {
    let mut p = vec![
        (0.0, -1.2),
        (0.0, -0.5),
        (-0.5, -0.5),
        (-0.7, 0.2),
        (-0.6, 0.8),
        (0.5, -0.5),
        (0.7, 0.2),
        (0.6, 0.8),
        (0.0, 1.5),
    ];
    for i in 0..25 {
        let a = TAU * i as f64 / 25.0;
        p.push((0.3 * a.cos(), -1.2 + 0.3 * a.sin()));
    }
    for wrist in [(0.6, 0.8), (-0.6, 0.8)] {
        p.push(wrist);
        for finger in 0..5 {
            let a = 0.4 * finger as f64 - 0.8;
            for joint in 1..=4 {
                let r = 0.05 * joint as f64;
                p.push((wrist.0 + r * a.sin(), wrist.1 + r * a.cos()));
            }
        }
    }
    debug_assert_eq!(p.len(), NUM_KEYPOINTS);
    p
}

/// `count` samples drawn from `seed`, in memory.
pub fn synthesize(spec: &SyntheticSpec, count: usize, seed: u64) -> Result<Vec<Sample>> {
    spec.validate()?;
    let motifs: Vec<Array> = (0..spec.concepts).map(|k| spec.motif(k)).collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut g = rng::stream(seed, &[rng::label("synthetic"), i as u64]);
        let len = g.random_range(spec.min_len..=spec.max_len);
        let concepts: Vec<usize> = (0..len).map(|_| g.random_range(0..spec.concepts)).collect();
        let mut data = Vec::new();
        for &k in &concepts {
            for (j, &v) in motifs[k].data().iter().enumerate() {
                let jitter = if j % NUM_CHANNELS == 2 || spec.noise == 0.0 {
                    0.0
                } else {
                    noise.sample(&mut g)
                };
                data.push(v + jitter);
            }
        }
        let text = concepts.iter().map(|&k| spec.word(k)).collect::<Vec<_>>().join(" ");
        out.push(Sample {
            pose: PoseSequence::from_frames(data, format!("syn{i:04}"))?,
            text,
        });
    }
    Ok(out)
}

/// Writes `count` samples under `dir` as PSEQ files plus `manifest.json` and
/// `translations.tsv`.
pub fn generate_synthetic(spec: &SyntheticSpec, count: usize, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    let samples = synthesize(spec, count, seed)?;
    let pose_dir = dir.join("poses");
    std::fs::create_dir_all(&pose_dir).map_err(|e| Error::io(&pose_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = PathBuf::from("poses").join(format!("{}.pseq", s.id()));
        let path = dir.join(&rel);
        std::fs::write(&path, write_pseq(&s.pose)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: s.id().to_string(),
            pose: rel,
            text: s.text.clone(),
        });
    }
    let manifest = DatasetManifest {
        split: "train".into(),
        samples: entries,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    let tsv = write_translations(samples.iter().map(|s| (s.id(), s.text.as_str())));
    let tsv_path = dir.join("translations.tsv");
    std::fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))?;
    Ok(manifest)
}
