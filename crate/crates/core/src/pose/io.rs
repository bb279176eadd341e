use std::io::Write;
use std::path::Path;

use super::{PoseSequence, FRAME_LEN, NUM_CHANNELS, NUM_KEYPOINTS};
use crate::{Error, Result};

pub const PSEQ_MAGIC: &[u8; 4] = b"PSEQ";
pub const PSEQ_VERSION: u32 = 1;

fn load_err(sample_id: &str, message: impl Into<String>) -> Error {
    Error::Load {
        sample_id: sample_id.to_string(),
        message: message.into(),
    }
}

/// One frame per line, each a `76×3` nested JSON array.
pub fn read_jsonl(text: &str, sample_id: &str) -> Result<PoseSequence> {
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame: Vec<Vec<f64>> = serde_json::from_str(line)
            .map_err(|e| load_err(sample_id, format!("line {}: {e}", i + 1)))?;
        if frame.len() != NUM_KEYPOINTS || frame.iter().any(|k| k.len() != NUM_CHANNELS) {
            return Err(load_err(sample_id, format!("line {}: frame is not 76×3", i + 1)));
        }
        data.extend(frame.into_iter().flatten());
    }
    if data.is_empty() {
        return Err(load_err(sample_id, "no frames"));
    }
    PoseSequence::from_frames(data, sample_id)
}

pub fn write_jsonl(seq: &PoseSequence) -> String {
    let mut out = String::new();
    for t in 0..seq.len() {
        let frame: Vec<&[f64]> = seq.frame(t).chunks(NUM_CHANNELS).collect();
        out.push_str(&serde_json::to_string(&frame).expect("frame serializes"));
        out.push('\n');
    }
    out
}

/// `PSEQ`, version and frame count as little-endian `u32`, then `T·76·3`
/// little-endian `f32` values.
pub fn read_pseq(bytes: &[u8], sample_id: &str) -> Result<PoseSequence> {
    if bytes.len() < 12 || &bytes[..4] != PSEQ_MAGIC {
        return Err(load_err(sample_id, "missing PSEQ header"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != PSEQ_VERSION {
        return Err(load_err(sample_id, format!("unsupported PSEQ version {version}")));
    }
    let t = word(8) as usize;
    let body = &bytes[12..];
    if body.len() != t * FRAME_LEN * 4 {
        return Err(load_err(
            sample_id,
            format!("expected {} bytes of frames, found {}", t * FRAME_LEN * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    PoseSequence::from_frames(data, sample_id)
}

pub fn write_pseq(seq: &PoseSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + seq.frames().len() * 4);
    out.write_all(PSEQ_MAGIC).expect("vec write");
    out.extend(PSEQ_VERSION.to_le_bytes());
    out.extend((seq.len() as u32).to_le_bytes());
    for &v in seq.frames().data() {
        out.extend((v as f32).to_le_bytes());
    }
    out
}

/// Reads either format, sniffing the `PSEQ` magic.
pub fn read_pose_file(path: &Path, sample_id: &str) -> Result<PoseSequence> {
    let bytes = std::fs::read(path).map_err(|e| load_err(sample_id, format!("{}: {e}", path.display())))?;
    if bytes.starts_with(PSEQ_MAGIC) {
        read_pseq(&bytes, sample_id)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| load_err(sample_id, "pose file is not UTF-8"))?;
        read_jsonl(&text, sample_id)
    }
}
