use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NUM_KEYPOINTS;
use crate::tensor::Array;
use crate::{Error, Result};

/// Keypoint regions and graph edges.
///
/// `regions` is an ordered list so pooled features have a stable layout.
/// The region named `body` anchors normalization, and `shoulders` names the
/// two keypoints whose distance fixes the scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    #[serde(with = "region_map")]
    pub regions: Vec<(String, Vec<usize>)>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default = "default_shoulders")]
    pub shoulders: (usize, usize),
}

fn default_shoulders() -> (usize, usize) {
    (2, 5)
}

// JSON objects keep insertion order only by convention, so regions are read
// into a list and sorted by their smallest index.
mod region_map {
    use serde::de::Deserializer;
    use serde::ser::{SerializeMap, Serializer};
    use serde::Deserialize;
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(v: &[(String, Vec<usize>)], s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(v.len()))?;
        for (k, idx) in v {
            map.serialize_entry(k, idx)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, Vec<usize>)>, D::Error> {
        let map: BTreeMap<String, Vec<usize>> = BTreeMap::deserialize(d)?;
        let mut v: Vec<_> = map.into_iter().collect();
        v.sort_by_key(|(_, idx)| idx.iter().min().copied().unwrap_or(usize::MAX));
        Ok(v)
    }
}

const HAND_EDGES: [[usize; 2]; 20] = [
    [0, 1], [1, 2], [2, 3], [3, 4],
    [0, 5], [5, 6], [6, 7], [7, 8],
    [0, 9], [9, 10], [10, 11], [11, 12],
    [0, 13], [13, 14], [14, 15], [15, 16],
    [0, 17], [17, 18], [18, 19], [19, 20],
];

impl Default for SkeletonSpec {
    /// Body 0–8 (nose, neck, right shoulder/elbow/wrist, left
    /// shoulder/elbow/wrist, mid-hip), face contour 9–33, left hand 34–54,
    /// right hand 55–75, each hand in the usual 21-point layout.
    fn default() -> Self {
        let mut edges = vec![[0, 1], [1, 2], [2, 3], [3, 4], [1, 5], [5, 6], [6, 7], [1, 8]];
        edges.extend((9..33).map(|i| [i, i + 1]));
        edges.push([0, 9]);
        for base in [34, 55] {
            edges.extend(HAND_EDGES.iter().map(|[a, b]| [a + base, b + base]));
        }
        edges.push([7, 34]);
        edges.push([4, 55]);
        Self {
            regions: vec![
                ("body".into(), (0..9).collect()),
                ("face".into(), (9..34).collect()),
                ("left_hand".into(), (34..55).collect()),
                ("right_hand".into(), (55..76).collect()),
            ],
            edges,
            shoulders: default_shoulders(),
        }
    }
}

impl SkeletonSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; NUM_KEYPOINTS];
        for (name, idx) in &self.regions {
            if idx.is_empty() {
                return Err(Error::Config(format!("region {name} is empty")));
            }
            for &i in idx {
                if i >= NUM_KEYPOINTS {
                    return Err(Error::Config(format!("region {name}: keypoint {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!("keypoint {i} is in more than one region")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("keypoint {i} belongs to no region")));
        }
        let (a, b) = self.shoulders;
        for &i in self.edges.iter().flatten().chain([&a, &b]) {
            if i >= NUM_KEYPOINTS {
                return Err(Error::Config(format!("keypoint {i} out of range")));
            }
        }
        if self.regions.iter().all(|(n, _)| n != "body") {
            return Err(Error::Config("a region named \"body\" is required".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn body_indices(&self) -> &[usize] {
        self.regions
            .iter()
            .find(|(n, _)| n == "body")
            .map(|(_, idx)| idx.as_slice())
            .expect("validated spec has a body region")
    }

    pub fn region_sets(&self) -> Vec<Vec<usize>> {
        self.regions.iter().map(|(_, idx)| idx.clone()).collect()
    }

    /// `D^-1/2 (A + I) D^-1/2` over the undirected edge set.
    pub fn normalized_adjacency(&self) -> Array {
        let v = NUM_KEYPOINTS;
        let mut a = Array::eye(v);
        for &[i, j] in &self.edges {
            if i != j {
                a.data_mut()[i * v + j] = 1.0;
                a.data_mut()[j * v + i] = 1.0;
            }
        }
        let deg: Vec<f64> = (0..v).map(|i| a.row(i).iter().sum::<f64>().sqrt().recip()).collect();
        let data = a.data_mut();
        for i in 0..v {
            for j in 0..v {
                data[i * v + j] *= deg[i] * deg[j];
            }
        }
        a
    }
}
