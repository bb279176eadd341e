//! Pose keypoint clips and the skeleton-graph visual backbone.

mod backbone;
mod io;
mod skeleton;

pub use backbone::{
    backbone_forward, gcn_block, init_backbone, region_pool, tcn_block, BackboneConfig,
    BackboneOutput, BACKBONE_PREFIX,
};
pub use io::{read_jsonl, read_pose_file, read_pseq, write_jsonl, write_pseq, PSEQ_MAGIC, PSEQ_VERSION};
pub use skeleton::SkeletonSpec;

use crate::tensor::Array;
use crate::{Error, Result};

pub const NUM_KEYPOINTS: usize = 76;
pub const NUM_CHANNELS: usize = 3;
const FRAME_LEN: usize = NUM_KEYPOINTS * NUM_CHANNELS;
const NORM_EPS: f64 = 1e-6;

/// A `T×76×3` clip of `(x, y, confidence)` keypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    frames: Array,
    pub sample_id: String,
}

impl PoseSequence {
    pub fn new(frames: Array, sample_id: impl Into<String>) -> Result<Self> {
        let sample_id = sample_id.into();
        let bad = |message: String| Error::Load {
            sample_id: sample_id.clone(),
            message,
        };
        match frames.shape() {
            [t, NUM_KEYPOINTS, NUM_CHANNELS] if *t >= 1 => {}
            s => return Err(bad(format!("expected T×76×3 keypoints, got {s:?}"))),
        }
        if !frames.all_finite() {
            return Err(bad("non-finite keypoint value".into()));
        }
        if let Some(c) = frames
            .data()
            .iter()
            .skip(2)
            .step_by(NUM_CHANNELS)
            .find(|c| !(0.0..=1.0).contains(*c))
        {
            return Err(bad(format!("confidence {c} outside [0, 1]")));
        }
        Ok(Self { frames, sample_id })
    }

    pub fn from_frames(frames: Vec<f64>, sample_id: impl Into<String>) -> Result<Self> {
        let t = frames.len() / FRAME_LEN;
        let sample_id = sample_id.into();
        if frames.len() % FRAME_LEN != 0 {
            return Err(Error::Load {
                sample_id,
                message: format!("{} values is not a whole number of frames", frames.len()),
            });
        }
        Self::new(Array::new(&[t, NUM_KEYPOINTS, NUM_CHANNELS], frames)?, sample_id)
    }

    pub fn frames(&self) -> &Array {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames.data()[t * FRAME_LEN..(t + 1) * FRAME_LEN]
    }

    /// Keeps frames `round(i·T/cap)` for `i < cap` when `T > cap`.
    pub fn subsample(&self, cap: usize) -> Self {
        let t = self.len();
        if cap == 0 || t <= cap {
            return self.clone();
        }
        let mut data = Vec::with_capacity(cap * FRAME_LEN);
        for i in 0..cap {
            let src = ((i * t) as f64 / cap as f64).round() as usize;
            data.extend_from_slice(self.frame(src.min(t - 1)));
        }
        Self {
            frames: Array::new(&[cap, NUM_KEYPOINTS, NUM_CHANNELS], data).expect("frame shape"),
            sample_id: self.sample_id.clone(),
        }
    }
}

/// Centers x/y on the body-region centroid of each frame and divides by the
/// shoulder distance (guarded below by a small epsilon). Confidence is left
/// as is.
pub fn normalize_pose(seq: &PoseSequence, spec: &SkeletonSpec) -> PoseSequence {
    let body = spec.body_indices();
    let (ls, rs) = spec.shoulders;
    let mut data = seq.frames.data().to_vec();
    for frame in data.chunks_mut(FRAME_LEN) {
        let xy = |i: usize, c: usize| frame[i * NUM_CHANNELS + c];
        let n = body.len() as f64;
        let cx = body.iter().map(|&i| xy(i, 0)).sum::<f64>() / n;
        let cy = body.iter().map(|&i| xy(i, 1)).sum::<f64>() / n;
        let scale = (xy(ls, 0) - xy(rs, 0)).hypot(xy(ls, 1) - xy(rs, 1)).max(NORM_EPS);
        for kp in frame.chunks_mut(NUM_CHANNELS) {
            kp[0] = (kp[0] - cx) / scale;
            kp[1] = (kp[1] - cy) / scale;
        }
    }
    PoseSequence {
        frames: Array::new(seq.frames.shape(), data).expect("same shape"),
        sample_id: seq.sample_id.clone(),
    }
}
