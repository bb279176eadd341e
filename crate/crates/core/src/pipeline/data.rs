use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::pose::{read_pose_file, PoseSequence};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub pose: PathBuf,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub samples: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pose: PoseSequence,
    pub text: String,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.pose.sample_id
    }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_ids()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Load {
                    sample_id: s.id.clone(),
                    message: "duplicate sample id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.pose.is_absolute() {
            entry.pose.clone()
        } else {
            self.base_dir.join(&entry.pose)
        }
    }
}

/// Reads every sample in manifest order, subsampling clips longer than
/// `frame_cap`.
pub fn load_dataset(manifest: &DatasetManifest, frame_cap: usize) -> Result<Vec<Sample>> {
    manifest.check_ids()?;
    manifest
        .samples
        .iter()
        .map(|e| {
            let pose = read_pose_file(&manifest.resolve(e), &e.id)?;
            Ok(Sample {
                pose: pose.subsample(frame_cap),
                text: e.text.clone(),
            })
        })
        .collect()
}

/// `sample_id<TAB>text` lines.
pub fn write_translations<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (id, text) in rows {
        out.push_str(id);
        out.push('\t');
        out.push_str(text);
        out.push('\n');
    }
    out
}

pub fn read_translations(text: &str, context: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::Format {
                    context: context.to_string(),
                    line: i + 1,
                    message: "expected sample_id<TAB>text".into(),
                })
        })
        .collect()
}
